"""Channel simulation: multipath, fading, CFO, noise, frame assembly.

The reference geometry is the LTE half frame: the PSS occurs once per
5 ms, i.e. every 9600 samples at the native 1.92 MHz rate.  Received
streams are synthesized as r(n) = e^{j 2 pi f n / fs} * sum_m h_m(n)
s(n - theta - d_m) + z(n) with integer tap delays d_m on the sampling
grid and circularly symmetric Gaussian noise z.

Two noise conventions coexist deliberately.  apply_channel scales the
noise to the measured signal power, which is what a one-shot SNR sweep
expects.  embed_pss_in_halfframe instead fixes the noise floor at unit
variance and scales the signal amplitude, so that a detection
threshold calibrated once on noise-only streams stays valid across
every SNR point of a Monte Carlo run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import os

import numpy as np

from .pss import read_iq, write_iq

SPEED_OF_LIGHT = 299792458.0
HALF_FRAME_SEC = 5e-3
DEFAULT_SAMPLE_RATE_HZ = 1.92e6
DEFAULT_CARRIER_HZ = 2e9
NOISE_FLOOR_VARIANCE = 1.0
JAKES_RAYS = 16

FADING_MODES = ("static", "rayleigh_block", "rayleigh_jakes")

# COST 207 Typical Urban, 6 taps: (delay in microseconds, mean power in dB).
TU6_DELAYS_US = (0.0, 0.2, 0.5, 1.6, 2.3, 5.0)
TU6_POWERS_DB = (-3.0, 0.0, -2.0, -6.0, -8.0, -10.0)


def doppler_hz(speed_kmh: float, carrier_hz: float = DEFAULT_CARRIER_HZ) -> float:
    """Maximum Doppler shift for a given UE speed."""
    return speed_kmh / 3.6 / SPEED_OF_LIGHT * carrier_hz


@dataclass(frozen=True)
class ChannelScenario:
    """One reproducible channel draw.

    ``taps`` are (delay_samples, mean_power_db) pairs with non-negative
    strictly increasing integer delays; the linear powers are
    renormalized to sum to one at construction.  ``snr_db`` may be
    +inf for noiseless runs.  ``timing_offset`` is theta in samples.
    """

    taps: tuple = ((0, 0.0),)
    fading: str = "static"
    snr_db: float = np.inf
    cfo_ppm: float = 0.0
    carrier_hz: float = DEFAULT_CARRIER_HZ
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    timing_offset: int = 0
    doppler_hz: float = 0.0
    seed: int = 0

    def __post_init__(self):
        taps = tuple((int(d), float(p)) for d, p in self.taps)
        if not taps:
            raise ValueError("scenario needs at least one tap")
        delays = [d for d, _ in taps]
        if delays[0] < 0 or any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError(
                f"tap delays must be non-negative and strictly increasing, got {delays}"
            )
        if self.fading not in FADING_MODES:
            raise ValueError(f"fading must be one of {FADING_MODES}, got {self.fading!r}")
        if self.fading == "rayleigh_jakes" and self.doppler_hz <= 0:
            raise ValueError("rayleigh_jakes fading needs doppler_hz > 0")
        if self.timing_offset < 0:
            raise ValueError("timing_offset must be non-negative")
        if self.sample_rate_hz <= 0 or self.carrier_hz <= 0:
            raise ValueError("sample_rate_hz and carrier_hz must be positive")
        linear = np.array([10.0 ** (p / 10.0) for _, p in taps])
        linear = linear / linear.sum()
        normalized = tuple(
            (d, float(10.0 * np.log10(p))) for (d, _), p in zip(taps, linear)
        )
        object.__setattr__(self, "taps", normalized)

    @property
    def delays(self) -> np.ndarray:
        return np.array([d for d, _ in self.taps], dtype=np.int64)

    @property
    def linear_powers(self) -> np.ndarray:
        return np.array([10.0 ** (p / 10.0) for _, p in self.taps])

    @property
    def cfo_hz(self) -> float:
        return self.cfo_ppm * 1e-6 * self.carrier_hz

    def half_frame_len(self) -> int:
        return int(round(self.sample_rate_hz * HALF_FRAME_SEC))


def normalized_cfo(scenario: ChannelScenario, size_n: int) -> float:
    """CFO as a fraction of subcarrier spacing: eps = N * Ts * f_cfo."""
    return size_n * scenario.cfo_hz / scenario.sample_rate_hz


def tu6_profile(sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> tuple:
    """COST 207 TU delays quantized to the sampling grid, powers in dB.

    Returns all 6 taps.  At 1.92 MHz the first two delays land on the
    same sample; merge_taps folds such collisions before a scenario is
    built from the profile.
    """
    return tuple(
        (int(round(d * 1e-6 * sample_rate_hz)), p)
        for d, p in zip(TU6_DELAYS_US, TU6_POWERS_DB)
    )


def merge_taps(taps) -> tuple:
    """Combine same-delay taps by adding their linear powers."""
    acc: dict[int, float] = {}
    for d, p in taps:
        acc[int(d)] = acc.get(int(d), 0.0) + 10.0 ** (p / 10.0)
    return tuple(
        (d, float(10.0 * np.log10(acc[d]))) for d in sorted(acc)
    )


def tu6_scenario(**kwargs) -> ChannelScenario:
    """A ChannelScenario on the merged TU6 profile."""
    fs = kwargs.get("sample_rate_hz", DEFAULT_SAMPLE_RATE_HZ)
    return ChannelScenario(taps=merge_taps(tu6_profile(fs)), **kwargs)


@dataclass(frozen=True)
class RxStream:
    """A received sample stream plus the ground truth for scoring."""

    samples: np.ndarray
    sample_rate_hz: float
    true_root: int | None = None
    pss_starts: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    half_frame_len: int | None = None


def _tap_gains(scenario, rng, num_taps):
    """One block-fading draw: complex gain per tap."""
    amps = np.sqrt(scenario.linear_powers)
    if scenario.fading == "static":
        return amps.astype(complex)
    draw = (rng.standard_normal(num_taps) + 1j * rng.standard_normal(num_taps))
    return amps * draw / np.sqrt(2.0)


class _JakesProcess:
    """Sum-of-sinusoids Rayleigh process, one instance per tap.

    g(n) = sqrt(p / M) * sum_i exp(j (2 pi fd cos(alpha_i) n Ts + phi_i))
    with independent uniform ray angles and phases.  Unit mean power,
    approximately Clarke-spectrum correlated across samples, evaluated
    at absolute sample indices so multi-frame runs stay continuous.
    """

    def __init__(self, power, doppler, sample_rate, rng, rays=JAKES_RAYS):
        self.amp = np.sqrt(power / rays)
        self.omega = 2.0 * np.pi * doppler * np.cos(rng.uniform(0, 2 * np.pi, rays))
        self.omega /= sample_rate
        self.phase = rng.uniform(0, 2 * np.pi, rays)

    def at(self, n: np.ndarray) -> np.ndarray:
        return self.amp * np.exp(
            1j * (np.outer(n, self.omega) + self.phase)
        ).sum(axis=1)


def apply_channel(
    tx: np.ndarray,
    scenario: ChannelScenario,
    out_len: int | None = None,
    true_root: int | None = None,
) -> RxStream:
    """Push one transmit burst through the scenario channel.

    The burst lands at timing_offset; the output, of length
    len(tx) + timing_offset + max_delay unless overridden, carries the
    CFO phase ramp on the signal and noise sized so that the mean
    signal power over the burst span divided by the noise variance is
    10^(snr_db / 10).  Draw order from scenario.seed is fixed: fading
    gains first, then noise.
    """
    tx = np.asarray(tx, dtype=complex)
    rng = np.random.default_rng(scenario.seed)
    theta = scenario.timing_offset
    delays = scenario.delays
    length = out_len or (len(tx) + theta + int(delays.max()))
    sig = np.zeros(length, dtype=complex)

    if scenario.fading == "rayleigh_jakes":
        procs = [
            _JakesProcess(p, scenario.doppler_hz, scenario.sample_rate_hz, rng)
            for p in scenario.linear_powers
        ]
        for d, proc in zip(delays, procs):
            start = theta + int(d)
            stop = min(start + len(tx), length)
            idx = np.arange(start, stop)
            sig[start:stop] += proc.at(idx) * tx[: stop - start]
    else:
        gains = _tap_gains(scenario, rng, len(delays))
        for d, g in zip(delays, gains):
            start = theta + int(d)
            stop = min(start + len(tx), length)
            sig[start:stop] += g * tx[: stop - start]

    if scenario.cfo_ppm:
        n = np.arange(length)
        sig *= np.exp(2j * np.pi * scenario.cfo_hz * n / scenario.sample_rate_hz)

    samples = sig
    if np.isfinite(scenario.snr_db):
        span = slice(theta, min(theta + len(tx) + int(delays.max()), length))
        p_sig = float(np.mean(np.abs(sig[span]) ** 2))
        sigma2 = p_sig / 10.0 ** (scenario.snr_db / 10.0)
        noise = rng.standard_normal(length) + 1j * rng.standard_normal(length)
        samples = sig + np.sqrt(sigma2 / 2.0) * noise

    return RxStream(
        samples=samples,
        sample_rate_hz=scenario.sample_rate_hz,
        true_root=true_root,
        pss_starts=np.array([theta], dtype=np.int64),
        half_frame_len=None,
    )


def embed_pss_in_halfframe(w, scenario: ChannelScenario, frame_count: int = 1) -> RxStream:
    """Synthesize frame_count half frames with one PSS burst in each.

    The noise floor is fixed at unit variance and the waveform is
    scaled so that the mean body-sample power equals
    10^(snr_db / 10) * floor; with block fading each half frame gets an
    independent tap draw while Jakes fading evolves continuously.  The
    reported pss_starts are the symbol body positions (after the cyclic
    prefix), one per half frame.  Draw order from scenario.seed is
    fixed: the full noise stream first, then the fading gains frame by
    frame.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be at least 1")
    hf = scenario.half_frame_len()
    sym = np.asarray(w.samples, dtype=complex)
    theta = scenario.timing_offset
    max_delay = int(scenario.delays.max())
    if theta + len(sym) + max_delay > hf:
        raise ValueError(
            f"timing_offset {theta} leaves no room for the symbol in a "
            f"{hf}-sample half frame"
        )
    rng = np.random.default_rng(scenario.seed)
    length = hf * frame_count

    noiseless = not np.isfinite(scenario.snr_db)
    if noiseless:
        stream = np.zeros(length, dtype=complex)
        amp = 1.0
    else:
        noise = rng.standard_normal(length) + 1j * rng.standard_normal(length)
        stream = np.sqrt(NOISE_FLOOR_VARIANCE / 2.0) * noise
        body_power = float(np.mean(np.abs(w.body) ** 2))
        amp = float(
            np.sqrt(10.0 ** (scenario.snr_db / 10.0) * NOISE_FLOOR_VARIANCE / body_power)
        )

    burst = amp * sym
    delays = scenario.delays
    f_cfo = scenario.cfo_hz
    procs = None
    if scenario.fading == "rayleigh_jakes":
        procs = [
            _JakesProcess(p, scenario.doppler_hz, scenario.sample_rate_hz, rng)
            for p in scenario.linear_powers
        ]

    starts = np.empty(frame_count, dtype=np.int64)
    for i in range(frame_count):
        base = i * hf + theta
        starts[i] = base + w.cp_len
        if procs is None:
            gains = _tap_gains(scenario, rng, len(delays))
        for m, d in enumerate(delays):
            lo = base + int(d)
            idx = np.arange(lo, lo + len(burst))
            if procs is None:
                contrib = gains[m] * burst
            else:
                contrib = procs[m].at(idx) * burst
            if f_cfo:
                contrib = contrib * np.exp(
                    2j * np.pi * f_cfo * idx / scenario.sample_rate_hz
                )
            stream[lo: lo + len(burst)] += contrib

    return RxStream(
        samples=stream,
        sample_rate_hz=scenario.sample_rate_hz,
        true_root=w.root,
        pss_starts=starts,
        half_frame_len=hf,
    )


def upsample_by_2(r: np.ndarray) -> np.ndarray:
    """Double the rate: copy originals, midpoint-interpolate between.

    out[2n] = r[n], out[2n+1] = (r[n] + r[n+1]) / 2, and the final odd
    sample repeats the last input.  [0, 2] becomes [0, 1, 2, 2].
    """
    r = np.asarray(r)
    if len(r) == 0:
        raise ValueError("cannot upsample an empty buffer")
    out = np.empty(2 * len(r), dtype=r.dtype)
    out[0::2] = r
    out[1:-1:2] = (r[:-1] + r[1:]) / 2
    out[-1] = r[-1]
    return out


# ---------------------------------------------------------------------------
# Stream files: raw IQ next to a small JSON sidecar with the metadata.
# ---------------------------------------------------------------------------

def write_stream(stream: RxStream, iq_path) -> None:
    write_iq(iq_path, stream.samples)
    meta = {
        "sample_rate_hz": stream.sample_rate_hz,
        "true_root": stream.true_root,
        "pss_starts": [int(s) for s in stream.pss_starts],
        "half_frame_len": stream.half_frame_len,
    }
    side = f"{iq_path}.json"
    tmp = f"{side}.tmp"
    with open(tmp, "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    os.replace(tmp, side)


def read_stream(iq_path) -> RxStream:
    samples = read_iq(iq_path)
    side = f"{iq_path}.json"
    if os.path.exists(side):
        with open(side) as f:
            meta = json.load(f)
        return RxStream(
            samples=samples,
            sample_rate_hz=float(meta["sample_rate_hz"]),
            true_root=meta["true_root"],
            pss_starts=np.asarray(meta["pss_starts"], dtype=np.int64),
            half_frame_len=meta["half_frame_len"],
        )
    return RxStream(samples=samples, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ)
