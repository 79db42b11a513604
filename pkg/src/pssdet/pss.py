"""Primary synchronization signal generation.

The LTE PSS is a length-63 Zadoff-Chu sequence with its center element
punctured, mapped onto the 62 subcarriers around DC, and brought to the
time domain on an N-point grid (N = 64 or 128 for the 1.4 MHz bandwidth
cases handled here).  Three root indices are in use, 25, 29 and 34, and
the pair (29, 34) is complex-conjugate: d_29(n) = conj(d_34(n)).  That
identity, together with the even symmetry s(n) = s(N - n) of the time
signal, is what the reduced-complexity correlators exploit, so both are
asserted by the test suite at machine precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

ZC_LENGTH = 63
PSS_ROOTS = (25, 29, 34)

# Conjugate pairing follows u <-> L - u.  63 - 29 = 34; root 25 has no
# partner inside the PSS root set (63 - 25 = 38).
CONJUGATE_ROOT = {29: 34, 34: 29}

# Cyclic prefix of the PSS OFDM symbol, in samples, per supported grid
# size.  These are the LTE normal-CP lengths scaled down from the
# 2048-point grid (144 * N / 2048), truncated to an integer at N = 64.
CP_LENGTH = {64: 4, 128: 9}

_SUPPORTED_SIZES = (64, 128)


@dataclass(frozen=True)
class ZcSequence:
    """A Zadoff-Chu sequence d_u(n) = exp(-j pi u n (n+1) / L)."""

    root: int
    length: int
    values: np.ndarray


@dataclass(frozen=True)
class FreqGrid:
    """Frequency-domain PSS on an N-point grid, DFT-natural bin order.

    ``bins[0]`` is DC, ``bins[1:size_n // 2]`` are the positive
    subcarriers k = 1 .. N/2 - 1 and ``bins[size_n // 2:]`` hold the
    negative ones, so signed index k maps to array index k mod N.
    Only the 62 bins k = +/-1 .. +/-31 are occupied; DC stays zero.
    """

    root: int
    size_n: int
    bins: np.ndarray


@dataclass(frozen=True)
class PssWaveform:
    """Time-domain PSS, optionally preceded by a cyclic prefix.

    ``samples`` holds cp_len + size_n entries; the OFDM body (the part
    the correlators match against) is ``samples[cp_len:]``.
    """

    root: int
    size_n: int
    cp_len: int
    samples: np.ndarray

    @property
    def body(self) -> np.ndarray:
        """The N-sample symbol body without the cyclic prefix."""
        return self.samples[self.cp_len:]


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def zc_sequence(root: int, length: int = ZC_LENGTH) -> ZcSequence:
    """Generate a Zadoff-Chu sequence of odd length.

    Parameters
    ----------
    root : int
        Root index u, coprime with ``length``.
    length : int
        Sequence length L, odd.

    Returns
    -------
    ZcSequence
        Unit-modulus sequence d_u(n) = exp(-j pi u n (n+1) / L) for
        n = 0 .. L-1.

    Notes
    -----
    The phase index u n (n+1) is reduced modulo 2L in exact integer
    arithmetic before the complex exponential is evaluated.  This keeps
    every element accurate to a couple of ulp, which the conjugate-pair
    identity between roots 29 and 34 relies on.
    """
    if length % 2 == 0 or length < 3:
        raise ValueError(f"length must be odd and >= 3, got {length}")
    if not (0 < root < length):
        raise ValueError(f"root must satisfy 0 < root < length, got {root}")
    if np.gcd(root, length) != 1:
        raise ValueError(f"root {root} is not coprime with length {length}")
    n = np.arange(length, dtype=np.int64)
    phase_idx = (root * n * (n + 1)) % (2 * length)
    values = np.exp(-1j * np.pi * phase_idx / length)
    return ZcSequence(root=root, length=length, values=_frozen(values))


def conjugate_root(root: int) -> int:
    """Return the PSS root whose sequence is the complex conjugate."""
    try:
        return CONJUGATE_ROOT[root]
    except KeyError:
        raise ValueError(
            f"root {root} has no conjugate partner among {PSS_ROOTS}"
        ) from None


def map_to_subcarriers(seq: ZcSequence, size_n: int) -> FreqGrid:
    """Place the center-punctured ZC sequence on an N-point DFT grid.

    The 63-element sequence loses its center element d(31); the first
    half d(0..30) goes to subcarriers k = -31 .. -1 and the second half
    d(32..62) to k = +1 .. +31, i.e. bin k holds d(k + 31) for every
    occupied k.  DC and all bins beyond +/-31 stay zero.
    """
    if seq.length != ZC_LENGTH:
        raise ValueError(f"expected a length-{ZC_LENGTH} sequence, got {seq.length}")
    if size_n < ZC_LENGTH + 1:
        raise ValueError(
            f"size_n = {size_n} cannot hold 62 occupied bins plus DC"
        )
    bins = np.zeros(size_n, dtype=complex)
    k = np.arange(-31, 32)
    k = k[k != 0]
    bins[k % size_n] = seq.values[k + 31]
    return FreqGrid(root=seq.root, size_n=size_n, bins=_frozen(bins))


def pss_time_domain(root: int, size_n: int) -> PssWaveform:
    """Synthesize the N-sample time-domain PSS for one root index.

    Evaluates s(n) = (1/N) * sum_k D(k) exp(-j 2 pi n k / N) over the
    occupied bins, which with the DFT-natural bin order is exactly the
    forward DFT of the grid scaled by 1/N.  The direct sum is kept as a
    test oracle; this path must agree with it to 1e-12 relative.
    """
    if size_n not in _SUPPORTED_SIZES:
        raise ValueError(f"size_n must be one of {_SUPPORTED_SIZES}, got {size_n}")
    grid = map_to_subcarriers(zc_sequence(root), size_n)
    samples = np.fft.fft(grid.bins) / size_n
    return PssWaveform(root=root, size_n=size_n, cp_len=0, samples=_frozen(samples))


def add_cyclic_prefix(w: PssWaveform, cp_len: int | None = None) -> PssWaveform:
    """Prepend the last ``cp_len`` body samples as a cyclic prefix."""
    if w.cp_len != 0:
        raise ValueError("waveform already carries a cyclic prefix")
    if cp_len is None:
        cp_len = CP_LENGTH[w.size_n]
    if not (0 < cp_len < w.size_n):
        raise ValueError(f"cp_len must lie in (0, {w.size_n}), got {cp_len}")
    samples = np.concatenate([w.samples[-cp_len:], w.samples])
    return PssWaveform(
        root=w.root, size_n=w.size_n, cp_len=cp_len, samples=_frozen(samples)
    )


# ---------------------------------------------------------------------------
# File formats: CSV (index, re, im) and raw interleaved float64 IQ.
# ---------------------------------------------------------------------------

def write_waveform_csv(path, samples: np.ndarray) -> None:
    """Write complex samples as CSV rows ``index,re,im``.

    Floats are rendered with repr (shortest round-trip form), so the
    file regenerates byte-identically for identical inputs.
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "re", "im"])
        for i, v in enumerate(samples):
            writer.writerow([i, repr(float(v.real)), repr(float(v.imag))])


def read_waveform_csv(path) -> np.ndarray:
    """Read complex samples from a CSV written by write_waveform_csv."""
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            out.append(complex(float(row["re"]), float(row["im"])))
    return np.asarray(out, dtype=complex)


def write_iq(path, samples: np.ndarray) -> None:
    """Write raw IQ: little-endian float64, I and Q interleaved."""
    np.asarray(samples, dtype="<c16").tofile(path)


def read_iq(path) -> np.ndarray:
    """Read raw IQ written by write_iq."""
    return np.fromfile(path, dtype="<c16")
