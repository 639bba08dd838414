"""Command-line front end.

    python -m mtsearch <command> [config.ini] [--section.key=value ...]
                       [--seed N] [--workers N] [--out DIR] [--timing]

Commands: simulate, curves, bounds, beamtrack, bench, stats. Every output
file except the timing files is a pure function of (config, seed).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import beamtrack as bt
from . import bounds
from . import montecarlo as mc
from . import trajectory as tr
from .channel import AWGN, BSC, QueryChannel
from .errors import SchemaError, SearchError
from .infodensity import capacity, dispersion, maximizers, stats

REQUIRED = object()


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "auto", "none") else int(s)


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(" ", "").split(",") if x)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(" ", "").split(",") if x)


def _words(s: str) -> tuple[str, ...]:
    return tuple(x for x in s.replace(" ", "").split(",") if x)


def _pairs(s: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in _words(s):
        a, b = item.split(":")
        out.append((int(a), int(b)))
    return tuple(out)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "channel": {
        "kind": (str, REQUIRED),
        "sigma": (float, 1.0),
        "h0": (float, 0.1),
        "h1": (float, 0.0),
    },
    "search": {
        "n": (int, 20),
        "k": (int, 1),
        "d": (int, 1),
        "v_plus": (float, 0.0),
        "M": (_opt_int, None),
        "mode": (str, tr.FREE),
        "slots": (_ints, ()),
        "motion": (str, tr.REFLECT),
        "cap": (int, tr.DEFAULT_CAP),
    },
    "decoder": {
        "p": (_opt_float, None),
        "gamma": (_opt_float, None),
        "gamma_rule": (str, mc.GAMMA_COUNT),
        "design_epsilon": (float, 0.3),
    },
    "experiment": {
        "trials": (int, 100),
        "seed": (int, 0),
        "epsilon": (float, 0.2),
        "fresh_codebook": (_bool, True),
        "ns": (_ints, ()),
        "m_max": (int, 64),
        "bench_grid": (_pairs, mc.BENCH_GRID),
    },
    "bounds": {
        "which": (_words, ("achievable_thm4", "converse_thm4")),
        "ns": (_ints, (100, 200, 500, 1000)),
        "epsilons": (_floats, ()),
        "ks": (_ints, ()),
        "v_pluses": (_floats, ()),
        "split_search": (int, 0),
    },
    "beamtrack": {
        "mode": (str, bt.ABSTRACT),
        "R1": (int, 4),
        "R2": (int, 4),
        "g": (float, 0.5),
        "wavelength": (float, 1.0),
        "power_scale": (float, 1.0),
        "noise_var": (float, 0.01),
        "threshold": (float, 0.25),
        "max_beam_cells": (int, 64),
        "sweep": (_bool, False),
        "sweep_measurement": (str, bt.ABSTRACT),
    },
}


@dataclass
class Context:
    cfg: dict[str, dict[str, Any]]
    seed: int
    workers: int
    out: Path
    timing: bool


def load_config(path: str | None, overrides: dict[str, str]) -> dict[str, dict[str, Any]]:
    """Parse an INI file plus ``section.key`` overrides against the schema."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise SchemaError(f"config file not found: {path}")
        try:
            cp.read_string(p.read_text())
        except configparser.Error as exc:
            raise SchemaError(f"config file does not parse: {exc}") from None
    raw: dict[str, dict[str, str]] = {s: dict(cp[s]) for s in cp.sections()}
    for dotted, value in overrides.items():
        if "." not in dotted:
            raise SchemaError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        raw.setdefault(sec, {})[key] = value
    out: dict[str, dict[str, Any]] = {}
    for sec, fields in raw.items():
        if sec not in SCHEMA:
            raise SchemaError(f"unknown config section [{sec}]")
        for key in fields:
            if key not in SCHEMA[sec]:
                raise SchemaError(f"unknown field {sec}.{key}")
    for sec, fields in SCHEMA.items():
        out[sec] = {}
        for key, (parse, default) in fields.items():
            given = raw.get(sec, {}).get(key)
            if given is None:
                if default is REQUIRED:
                    raise SchemaError(f"missing required field {sec}.{key}")
                out[sec][key] = default
                continue
            try:
                out[sec][key] = parse(given)
            except (ValueError, TypeError):
                expected = getattr(parse, "__name__", "value").lstrip("_")
                raise SchemaError(f"field {sec}.{key}: expected {expected}, got {given!r}") from None
    return out


def build_channel(cfg: dict[str, dict[str, Any]]) -> QueryChannel:
    c = cfg["channel"]
    kind = c["kind"].upper()
    if kind == BSC:
        return QueryChannel.bsc(c["h0"], c["h1"])
    if kind == AWGN:
        return QueryChannel.awgn(c["sigma"], c["h0"], c["h1"])
    raise SchemaError(f"field channel.kind: expected BSC or AWGN, got {c['kind']!r}")


def build_spec(ctx: Context) -> mc.ExperimentSpec:
    s, d, e = ctx.cfg["search"], ctx.cfg["decoder"], ctx.cfg["experiment"]
    return mc.ExperimentSpec(
        channel=build_channel(ctx.cfg), n=s["n"], k=s["k"], d=s["d"], v_plus=s["v_plus"], M=s["M"],
        p=d["p"], gamma=d["gamma"], gamma_rule=d["gamma_rule"], design_epsilon=d["design_epsilon"],
        epsilon=e["epsilon"], trials=e["trials"], seed=ctx.seed, mode=s["mode"], slots=s["slots"],
        fresh_codebook=e["fresh_codebook"], motion=s["motion"], cap=s["cap"],
    )


# ---------------------------------------------------------------- output helpers


def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple)):
        return ";".join(_fmt(v) for v in x)
    return str(x)


def write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_manifest(ctx: Context, command: str, outputs: list[str], resolved: dict | None = None) -> None:
    m = {
        "artifact": "mtsearch",
        "version": __version__,
        "command": command,
        "seed": ctx.seed,
        "config": ctx.cfg,
        "resolved": resolved or {},
        "outputs": sorted(outputs + ["manifest.json"]),
    }
    with open(ctx.out / "manifest.json", "w") as fh:
        json.dump(_jsonable(m), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_timing(ctx: Context, data: dict) -> None:
    with open(ctx.out / "timing.json", "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands


TRIAL_HEADER = [
    "trial", "accepted", "excess", "error", "visited", "resamples", "true_s", "true_v", "est_s", "est_v",
]
SUMMARY_HEADER = [
    "trials", "excess_count", "excess_probability", "ci_low", "ci_high", "acceptance_rate", "resamples",
    "M", "p", "gamma", "delta",
]


def cmd_simulate(ctx: Context) -> None:
    spec = build_spec(ctx)
    res, summ, recs = mc.run_trials(spec, ctx.workers)
    write_csv(
        ctx.out / "trials.csv",
        TRIAL_HEADER,
        [
            [r.index, r.accepted, r.excess, r.error, r.visited, r.resamples,
             sum(r.true_s, []), sum(r.true_v, []), sum(r.est_s, []), sum(r.est_v, [])]
            for r in recs
        ],
    )
    write_csv(
        ctx.out / "summary.csv",
        SUMMARY_HEADER,
        [[summ.trials, summ.excess_count, summ.excess_probability, summ.ci_low, summ.ci_high,
          summ.acceptance_rate, summ.resamples, res.M, res.p, res.gamma, res.delta]],
    )
    write_manifest(ctx, "simulate", ["trials.csv", "summary.csv"], asdict(res))
    if ctx.timing:
        write_timing(ctx, {
            "mean_decode_time": summ.mean_decode_time,
            "median_decode_time": summ.median_decode_time,
            "decode_time": [r.decode_time for r in recs],
        })


CURVE_HEADER = ["n", "M", "empirical_nats", "excess_probability", "achievable_nats", "converse_nats", "evaluations"]


def cmd_curves(ctx: Context) -> None:
    spec = build_spec(ctx)
    ns = ctx.cfg["experiment"]["ns"] or (spec.n,)
    pts = mc.resolution_curve(spec, ns, ctx.workers, ctx.cfg["experiment"]["m_max"])
    write_csv(
        ctx.out / "curve.csv",
        CURVE_HEADER,
        [[p.n, p.M, p.empirical_nats, p.excess_probability, p.achievable_nats, p.converse_nats, p.evaluations]
         for p in pts],
    )
    write_manifest(ctx, "curves", ["curve.csv"], {"ns": list(ns)})


BOUNDS_HEADER = ["which", "n", "k", "d", "epsilon", "v_plus", "value_nats", "resolution_delta"]


def cmd_bounds(ctx: Context) -> None:
    ch = build_channel(ctx.cfg)
    s, b, e = ctx.cfg["search"], ctx.cfg["bounds"], ctx.cfg["experiment"]
    eps_list = b["epsilons"] or (e["epsilon"],)
    ks = b["ks"] or (s["k"],)
    vps = b["v_pluses"] or (s["v_plus"],)
    rows = []
    for which in b["which"]:
        if which not in bounds.WHICH:
            raise SchemaError(f"field bounds.which: expected one of {', '.join(bounds.WHICH)}, got {which!r}")
        for k in ks:
            for vp in vps:
                for eps in eps_list:
                    for n in b["ns"]:
                        slots = s["slots"] or None
                        val = bounds.second_order(
                            ch, n, k, s["d"], eps, vp, which, slots=slots, split_search=b["split_search"]
                        )
                        nn = slots[-1] if (slots and which.startswith("piecewise")) else n
                        rows.append([which, nn, k, s["d"], eps, vp, val, math.exp(-val)])
    write_csv(ctx.out / "bounds.csv", BOUNDS_HEADER, rows)
    write_manifest(ctx, "bounds", ["bounds.csv"], {"capacity": {str(k): capacity(ch, k)[0] for k in ks}})


BEAM_HEADER = [
    "trial", "accepted", "excess", "angular_error", "wrapped", "empty_beams",
    "true_az", "true_el", "true_v_az", "true_v_el", "est_az", "est_el", "est_v_az", "est_v_el",
]
BEAM_SUMMARY_HEADER = [
    "trials", "excess_count", "excess_probability", "ci_low", "ci_high", "acceptance_rate",
    "wrapped_trials", "angular_tolerance",
]
SWEEP_HEADER = ["trial", "resolution", "fine_beams", "found_all", "max_error"]


def build_beam_spec(ctx: Context) -> bt.BeamSpec:
    s, d, e, b = ctx.cfg["search"], ctx.cfg["decoder"], ctx.cfg["experiment"], ctx.cfg["beamtrack"]
    M = s["M"] if s["M"] is not None else 2
    return bt.BeamSpec(
        channel=build_channel(ctx.cfg), n=s["n"], k=s["k"], M=M, v_plus=s["v_plus"], p=d["p"],
        gamma=d["gamma"], gamma_rule=d["gamma_rule"], design_epsilon=d["design_epsilon"],
        trials=e["trials"], seed=ctx.seed,
        geometry=bt.ArrayGeometry(b["R1"], b["R2"], b["g"], b["wavelength"]),
        rx=bt.RxModel(b["power_scale"], 1.0 + 0.0j, b["noise_var"], b["threshold"], b["max_beam_cells"]),
        cap=s["cap"],
    )


def cmd_beamtrack(ctx: Context) -> None:
    spec = build_beam_spec(ctx)
    b = ctx.cfg["beamtrack"]
    res, summ, recs = bt.run_beam_tracking(spec, b["mode"], ctx.workers)
    rows = []
    for r in recs:
        rows.append([
            r.index, r.accepted, r.excess, r.angular_error, r.wrapped, r.empty_beams,
            [t.phi_az for t in r.truth], [t.phi_el for t in r.truth],
            [t.v_az for t in r.truth], [t.v_el for t in r.truth],
            [t.phi_az for t in r.estimates], [t.phi_el for t in r.estimates],
            [t.v_az for t in r.estimates], [t.v_el for t in r.estimates],
        ])
    write_csv(ctx.out / "beam_trials.csv", BEAM_HEADER, rows)
    write_csv(
        ctx.out / "beam_summary.csv",
        BEAM_SUMMARY_HEADER,
        [[summ.trials, summ.excess_count, summ.excess_probability, summ.ci_low, summ.ci_high,
          summ.acceptance_rate, summ.wrapped_trials, summ.angular_tolerance]],
    )
    outputs = ["beam_trials.csv", "beam_summary.csv"]
    if b["sweep"]:
        srows = []
        for r in recs:
            rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, r.index, 0xB5]))
            sw = bt.beam_sweep_baseline(
                spec.n, spec.k, r.truth, spec.geometry, spec.rx, rng, b["sweep_measurement"]
            )
            srows.append([r.index, sw.resolution, sw.fine_beams, all(sw.found), max(sw.errors)])
        write_csv(ctx.out / "sweep.csv", SWEEP_HEADER, srows)
        outputs.append("sweep.csv")
    write_manifest(ctx, "beamtrack", outputs, asdict(res))


BENCH_HEADER = ["k", "n", "M", "trials", "agreement"]
BENCH_TIMING_HEADER = ["k", "n", "single_mean", "multi_mean", "ratio"]


def cmd_bench(ctx: Context) -> None:
    spec = build_spec(ctx)
    rows = mc.runtime_bench(spec, ctx.cfg["experiment"]["bench_grid"], ctx.workers)
    write_csv(ctx.out / "bench.csv", BENCH_HEADER, [[r.k, r.n, r.M, r.trials, r.agreement] for r in rows])
    # timings are machine dependent and therefore kept out of the deterministic files
    write_csv(
        ctx.out / "bench_timing.csv",
        BENCH_TIMING_HEADER,
        [[r.k, r.n, r.single_mean, r.multi_mean, r.ratio] for r in rows],
    )
    write_manifest(ctx, "bench", ["bench.csv"])


STATS_HEADER = ["k", "p", "t", "C", "V", "T"]


def cmd_stats(ctx: Context) -> None:
    ch = build_channel(ctx.cfg)
    k = ctx.cfg["search"]["k"]
    C, p_star = capacity(ch, k)
    rows = []
    for t in range(1, k + 1):
        st = stats(ch, p_star, t, k)
        rows.append([k, p_star, t, st.C, st.V, st.T])
    write_csv(ctx.out / "stats.csv", STATS_HEADER, rows)
    eps = ctx.cfg["experiment"]["epsilon"]
    write_manifest(ctx, "stats", ["stats.csv"], {
        "capacity": C, "p_star": p_star, "maximizers": maximizers(ch, k), "dispersion": dispersion(ch, k, eps),
    })


COMMANDS: dict[str, Callable[[Context], None]] = {
    "simulate": cmd_simulate,
    "curves": cmd_curves,
    "bounds": cmd_bounds,
    "beamtrack": cmd_beamtrack,
    "bench": cmd_bench,
    "stats": cmd_stats,
}


def _split_overrides(extra: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise SchemaError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, val = body.split("=", 1)
        else:
            key = body
            try:
                val = next(it)
            except StopIteration:
                raise SchemaError(f"override {tok} has no value") from None
        out[key] = val
    return out


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtsearch", description="Noisy multi-target search simulator.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", nargs="?", help="INI config file")
    ap.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
    ap.add_argument("--workers", type=int, default=mc.default_workers(), help="worker processes")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--timing", action="store_true", help="also write timing.json")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = make_parser()
    args, extra = ap.parse_known_args(argv)
    try:
        overrides = _split_overrides(extra)
        cfg = load_config(args.config, overrides)
        seed = args.seed if args.seed is not None else cfg["experiment"]["seed"]
        cfg["experiment"]["seed"] = seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, seed, max(1, args.workers), out, args.timing)
        COMMANDS[args.command](ctx)
    except SearchError as exc:
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": exc.category, "exit_code": exc.exit_code, "message": msg}), file=sys.stderr)
        print(f"mtsearch: {exc.category} error: {msg}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
