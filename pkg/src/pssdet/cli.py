"""Command line front end.

Every experiment command resolves its parameters in three layers
(built-in defaults, then a JSON config file, then explicit flags) and
writes the resolved set to ``manifest.json`` next to its outputs.
Feeding that manifest back through ``--config`` with no other flags
reruns the experiment and reproduces the result files byte for byte.

Exit codes: 0 on success, 1 on bad arguments or config, 2 on runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import tempfile

import numpy as np

from . import channel as ch
from .channel import read_stream
from .clustering import kmeans_cluster, save_table
from .detector import (
    DEFAULT_PFA,
    EngineConfig,
    acquisition_cdf,
    acquisition_experiment,
    calibrate_threshold,
    detect,
    pmd_experiment,
    prepare_engine,
)
from .correlator import bench_ops
from .pss import (
    PSS_ROOTS,
    add_cyclic_prefix,
    pss_time_domain,
    write_iq,
    write_waveform_csv,
)

DEFAULT_ENGINES = "mf_opt:os1,mf_opt:os2,cluster:k8:os2,cluster:k16:os2"


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1 and accepts
    negative-first grid values like ``-12:0:2`` or ``-8,-6`` without
    forcing the ``--snr=`` form."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = re.compile(
            r"^-\d+[\d.,:-]*$|^-\d*\.\d+$"
        )

    def error(self, message):
        raise CliError(message)


def parse_engine_spec(spec: str) -> EngineConfig:
    """Parse one engine token like ``cluster:k8:os2`` or ``mf_opt:os1``."""
    parts = spec.strip().split(":")
    kind = parts[0]
    clusters = None
    oversample = 2
    for part in parts[1:]:
        if part.startswith("k"):
            clusters = int(part[1:])
        elif part.startswith("os"):
            oversample = int(part[2:])
        else:
            raise CliError(f"bad engine field {part!r} in {spec!r}")
    try:
        return EngineConfig(kind=kind, oversample=oversample, num_clusters=clusters)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def parse_engines(text: str) -> list[EngineConfig]:
    configs = [parse_engine_spec(tok) for tok in text.split(",") if tok.strip()]
    if not configs:
        raise CliError("no engines given")
    return configs


def parse_snr_grid(text: str) -> list[float]:
    """Comma list (``-10,-8,-6``) or range spec (``-12:0:2``)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(f"range spec needs start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise CliError("snr step must be positive")
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _float_repr(x) -> str:
    return repr(float(x))


def _write_text(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header: list[str], rows: list[list]):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            _float_repr(v) if isinstance(v, float) else str(v) for v in row
        ))
    _write_text(path, "\n".join(lines) + "\n")


def _write_json(path: str, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config file and explicit flags, in that order."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key == "command":
                continue
            if key not in defaults:
                raise CliError(f"unknown config key {key!r}")
            resolved[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _manifest(output_dir: str, command: str, resolved: dict):
    _write_json(os.path.join(output_dir, "manifest.json"),
                {"command": command, **resolved})


def _add_common(sub, with_engines=True):
    sub.add_argument("--config", help="JSON config file (flags override it)")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--jobs", type=int)
    sub.add_argument("--output-dir", dest="output_dir")
    if with_engines:
        sub.add_argument("--engines", help="comma list, e.g. " + DEFAULT_ENGINES)


def _taps_for(profile: str):
    if profile == "awgn":
        return ((0, 0.0),)
    if profile == "tu6":
        return ch.merge_taps(ch.tu6_profile())
    raise CliError(f"unknown channel profile {profile!r}")


def _load_thresholds(resolved, configs):
    path = resolved.get("thresholds")
    if not path:
        return None
    try:
        with open(path) as f:
            table = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read thresholds {path}: {exc}") from exc
    missing = [c.key for c in configs if c.key not in table]
    if missing:
        raise CliError(f"thresholds file lacks engines: {', '.join(missing)}")
    return {c.key: float(table[c.key]) for c in configs}


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_gen_pss(args) -> int:
    root = args.root
    if root not in PSS_ROOTS:
        raise CliError(f"root must be one of {PSS_ROOTS}")
    w = pss_time_domain(root, args.size_n)
    if args.cp:
        w = add_cyclic_prefix(w)
    out = args.out or f"pss_u{root}_n{args.size_n}.{args.format}"
    if args.format == "csv":
        write_waveform_csv(out, w.samples)
    else:
        write_iq(out, w.samples)
    print(f"wrote {out} ({len(w.samples)} samples, root {root})")
    return 0


def cmd_cluster(args) -> int:
    defaults = {"root": 25, "size_n": 128, "clusters": 8, "seed": 0,
                "restarts": 0, "out": None, "output_dir": "."}
    resolved = _resolve(args, defaults)
    root = resolved["root"]
    if root not in PSS_ROOTS:
        raise CliError(f"root must be one of {PSS_ROOTS}")
    w = pss_time_domain(root, resolved["size_n"])
    table = kmeans_cluster(
        w.body, resolved["clusters"], seed=resolved["seed"],
        random_restarts=resolved["restarts"], root=root,
    )
    out = resolved["out"] or os.path.join(
        resolved["output_dir"],
        f"table_u{root}_n{resolved['size_n']}_k{resolved['clusters']}.json",
    )
    save_table(table, out)
    print(f"wrote {out} (wwcss {table.final_wwcss!r}, "
          f"converged {table.converged})")
    return 0


def cmd_calibrate(args) -> int:
    defaults = {"engines": DEFAULT_ENGINES, "pfa": DEFAULT_PFA,
                "trials": 2000, "seed": 0, "jobs": 1, "output_dir": "."}
    resolved = _resolve(args, defaults)
    configs = parse_engines(resolved["engines"])
    out_dir = resolved["output_dir"]
    table = {}
    for config in configs:
        lam = calibrate_threshold(
            config, pfa=resolved["pfa"], trials=resolved["trials"],
            seed=resolved["seed"], jobs=resolved["jobs"],
        )
        table[config.key] = lam
        print(f"{config.key}: threshold {lam!r}")
    _write_json(os.path.join(out_dir, "thresholds.json"), table)
    _manifest(out_dir, "calibrate", resolved)
    print(f"wrote {os.path.join(out_dir, 'thresholds.json')}")
    return 0


def cmd_detect(args) -> int:
    stream = read_stream(args.stream)
    config = parse_engine_spec(args.engine)
    if args.threshold is not None:
        lam = args.threshold
    else:
        lam = calibrate_threshold(config, trials=args.cal_trials, seed=args.seed)
    res = detect(stream, prepare_engine(config), lam)
    out = {
        "engine": res.engine_key, "detected": res.detected, "root": res.root,
        "lag": res.lag, "metric": res.metric, "threshold": res.threshold,
    }
    if res.correct is not None:
        out["correct"] = res.correct
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _write_text(args.out, text + "\n")
    return 0


def cmd_pmd(args) -> int:
    defaults = {
        "engines": DEFAULT_ENGINES, "snr": "-12:0:1", "trials": 1000,
        "pfa": DEFAULT_PFA, "cal_trials": 2000, "seed": 0, "jobs": 1,
        "ppm": 0.0, "profile": "awgn", "fading": "static",
        "thresholds": None, "output_dir": ".",
    }
    resolved = _resolve(args, defaults)
    configs = parse_engines(resolved["engines"])
    snr_grid = (parse_snr_grid(resolved["snr"])
                if isinstance(resolved["snr"], str) else
                [float(s) for s in resolved["snr"]])
    resolved["snr"] = snr_grid
    points = pmd_experiment(
        configs, snr_grid, trials=resolved["trials"],
        base_seed=resolved["seed"], pfa=resolved["pfa"],
        calibration_trials=resolved["cal_trials"],
        thresholds=_load_thresholds(resolved, configs),
        taps=_taps_for(resolved["profile"]), fading=resolved["fading"],
        cfo_ppm=resolved["ppm"], jobs=resolved["jobs"], verbose=True,
    )
    out_dir = resolved["output_dir"]
    rows = [
        [p.snr_db, p.engine_key, p.num_clusters if p.num_clusters else 0,
         p.oversample, p.trials, p.misses, p.pmd, p.ci_lo, p.ci_hi]
        for p in points
    ]
    _write_csv(
        os.path.join(out_dir, "pmd.csv"),
        ["snr_db", "engine", "k", "oversample", "trials", "misses",
         "pmd", "ci_lo", "ci_hi"],
        rows,
    )
    _manifest(out_dir, "pmd", resolved)
    print(f"wrote {os.path.join(out_dir, 'pmd.csv')} ({len(rows)} rows)")
    return 0


def cmd_acq(args) -> int:
    defaults = {
        "engines": DEFAULT_ENGINES, "snr": -5.0, "ppm": 5.0,
        "trials": 500, "max_half_frames": 200, "pfa": DEFAULT_PFA,
        "cal_trials": 2000, "seed": 0, "jobs": 1, "profile": "tu6",
        "fading": "rayleigh_block", "doppler_hz": 0.0,
        "thresholds": None, "output_dir": ".",
    }
    resolved = _resolve(args, defaults)
    configs = parse_engines(resolved["engines"])
    results = acquisition_experiment(
        configs, trials=resolved["trials"], base_seed=resolved["seed"],
        snr_db=float(resolved["snr"]), cfo_ppm=resolved["ppm"],
        taps=_taps_for(resolved["profile"]), fading=resolved["fading"],
        doppler_hz=resolved["doppler_hz"],
        max_half_frames=resolved["max_half_frames"],
        thresholds=_load_thresholds(resolved, configs),
        pfa=resolved["pfa"], calibration_trials=resolved["cal_trials"],
        jobs=resolved["jobs"],
    )
    out_dir = resolved["output_dir"]
    by_key = {c.key: c for c in configs}
    _write_csv(
        os.path.join(out_dir, "acq_results.csv"),
        ["engine", "k", "oversample", "ppm", "trial", "half_frames",
         "time_ms", "censored"],
        [[r.engine_key, by_key[r.engine_key].num_clusters or 0,
          by_key[r.engine_key].oversample, float(resolved["ppm"]), r.trial,
          r.half_frames, r.time_ms, int(r.censored)] for r in results],
    )
    cdf_rows = acquisition_cdf(results, resolved["max_half_frames"])
    _write_csv(
        os.path.join(out_dir, "acq_cdf.csv"),
        ["engine", "k", "oversample", "ppm", "time_ms", "cdf"],
        [[key, by_key[key].num_clusters or 0, by_key[key].oversample,
          float(resolved["ppm"]), t_ms, cdf] for key, t_ms, cdf in cdf_rows],
    )
    _manifest(out_dir, "acq", resolved)
    print(f"wrote {os.path.join(out_dir, 'acq_results.csv')} and acq_cdf.csv")
    return 0


def cmd_bench_ops(args) -> int:
    rows = []
    for config in parse_engines(args.engines or DEFAULT_ENGINES):
        rows.append(bench_ops(
            config.kind, oversample=config.oversample,
            num_clusters=config.num_clusters,
            architecture=config.architecture,
            probe_lags=args.probe_lags,
        ))
    text = json.dumps(rows, indent=2)
    print(text)
    if args.out:
        _write_text(args.out, text + "\n")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pssdet",
                     description="PSS detection and cluster-quantized "
                                 "correlator experiments")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-pss", help="write a reference waveform")
    p.add_argument("--root", type=int, default=25)
    p.add_argument("--size-n", dest="size_n", type=int, default=64)
    p.add_argument("--cp", action="store_true", help="prepend cyclic prefix")
    p.add_argument("--format", choices=("csv", "iq"), default="csv")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gen_pss)

    p = subs.add_parser("cluster", help="build and save a cluster table")
    p.add_argument("--config")
    p.add_argument("--root", type=int)
    p.add_argument("--size-n", dest="size_n", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out")
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(fn=cmd_cluster)

    p = subs.add_parser("calibrate", help="calibrate CFAR thresholds")
    _add_common(p)
    p.add_argument("--pfa", type=float)
    p.add_argument("--trials", type=int)
    p.set_defaults(fn=cmd_calibrate)

    p = subs.add_parser("detect", help="run one engine over a stored stream")
    p.add_argument("--stream", required=True, help="IQ file with sidecar")
    p.add_argument("--engine", default="mf_opt:os2")
    p.add_argument("--threshold", type=float)
    p.add_argument("--cal-trials", dest="cal_trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_detect)

    p = subs.add_parser("pmd", help="missed-detection probability sweep")
    _add_common(p)
    p.add_argument("--snr", help="grid: '-12:0:1' or '-8,-6,-4'")
    p.add_argument("--trials", type=int)
    p.add_argument("--pfa", type=float)
    p.add_argument("--cal-trials", dest="cal_trials", type=int)
    p.add_argument("--ppm", type=float)
    p.add_argument("--profile", choices=("awgn", "tu6"))
    p.add_argument("--fading", choices=ch.FADING_MODES)
    p.add_argument("--thresholds", help="thresholds.json from calibrate")
    p.set_defaults(fn=cmd_pmd)

    p = subs.add_parser("acq", help="acquisition time experiment")
    _add_common(p)
    p.add_argument("--snr", type=float)
    p.add_argument("--ppm", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--max-half-frames", dest="max_half_frames", type=int)
    p.add_argument("--pfa", type=float)
    p.add_argument("--cal-trials", dest="cal_trials", type=int)
    p.add_argument("--profile", choices=("awgn", "tu6"))
    p.add_argument("--fading", choices=ch.FADING_MODES)
    p.add_argument("--doppler-hz", dest="doppler_hz", type=float)
    p.add_argument("--thresholds", help="thresholds.json from calibrate")
    p.set_defaults(fn=cmd_acq)

    p = subs.add_parser("bench-ops", help="per-sample operation counts")
    p.add_argument("--engines", default=DEFAULT_ENGINES)
    p.add_argument("--probe-lags", dest="probe_lags", type=int, default=256)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench_ops)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
