"""Seeded Monte Carlo harness: end-to-end trials, resolution curves, runtime bench.

Trial ``i`` of a run with master seed ``s`` draws everything (targets,
codebook, channel noise) from ``SeedSequence([s, i])``, so results do not
depend on how trials are spread over worker processes. BLAS is pinned to one
thread inside every trial so matrix products round identically everywhere.
"""

from __future__ import annotations

import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import bounds
from . import trajectory as tr
from .channel import QueryChannel
from .codebook import Codebook, default_eta, generate, oracle_responses
from .decoder import (
    PIECEWISE,
    DecodeConfig,
    decode_multi_threshold_baseline,
    decode_piecewise,
    decode_single_threshold,
    default_gamma,
)
from .errors import DomainError
from .infodensity import capacity
from .trajectory import TargetState, TrajectoryGrid

GAMMA_COUNT = "count"
GAMMA_DISPERSION = "dispersion"
MODES = (*tr.MODES, PIECEWISE)
MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce a run. ``None`` fields are resolved automatically."""

    channel: QueryChannel
    n: int
    k: int = 1
    d: int = 1
    v_plus: float = 0.0
    M: int | None = None
    p: float | None = None
    gamma: float | None = None
    gamma_rule: str = GAMMA_COUNT
    design_epsilon: float = 0.3
    epsilon: float = 0.2
    trials: int = 100
    seed: int = 0
    mode: str = tr.FREE
    slots: tuple[int, ...] = ()
    fresh_codebook: bool = True
    motion: str = tr.REFLECT
    cap: int = tr.DEFAULT_CAP
    cells: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise DomainError("trials must be at least 1")
        if self.n < 1 or self.k < 1 or self.d < 1:
            raise DomainError("n, k and d must be positive")
        if self.v_plus < 0:
            raise DomainError("v_plus must be nonnegative")
        if self.mode not in MODES:
            raise DomainError(f"unknown decoder mode {self.mode!r}")
        if self.gamma_rule not in (GAMMA_COUNT, GAMMA_DISPERSION):
            raise DomainError(f"unknown gamma rule {self.gamma_rule!r}")
        if self.mode == PIECEWISE:
            if not self.slots or list(self.slots) != sorted(set(self.slots)) or self.slots[0] < 1:
                raise DomainError("piecewise mode needs strictly increasing positive slot boundaries")
            if self.slots[-1] != self.n:
                raise DomainError("the last slot boundary must equal n")
        if self.M is not None and self.M < 1:
            raise DomainError("M must be positive")


@dataclass(frozen=True)
class Resolved:
    """Auto-filled parameters, recorded verbatim in run manifests."""

    M: int
    p: float
    gamma: float
    gammas: tuple[float, ...]
    delta: float
    eta: float


def _design_mode(mode: str) -> str:
    return "free" if mode in (tr.FREE, PIECEWISE) else mode


def resolve(spec: ExperimentSpec) -> Resolved:
    p = spec.p if spec.p is not None else capacity(spec.channel, spec.k)[1]
    if spec.M is not None:
        M = spec.M
    else:
        n_design = spec.slots[0] if spec.mode == PIECEWISE else spec.n
        M = bounds.design_M(
            spec.channel, n_design, spec.k, spec.d, spec.v_plus, spec.design_epsilon, p, _design_mode(spec.mode)
        )

    def gamma_for(n: int, mode: str) -> float:
        if spec.gamma_rule == GAMMA_DISPERSION:
            return bounds.dispersion_gamma(spec.channel, n, spec.k, p, spec.design_epsilon)
        return default_gamma(n, M, spec.k, spec.d, spec.v_plus, mode)

    if spec.mode == PIECEWISE:
        lengths = slot_lengths(spec.slots)
        gammas = tuple(
            spec.gamma if spec.gamma is not None else gamma_for(L, tr.FREE if j == 0 else tr.KNOWN_INITIAL)
            for j, L in enumerate(lengths)
        )
        delta = (len(lengths) + 1) / M
    else:
        gammas = (spec.gamma if spec.gamma is not None else gamma_for(spec.n, spec.mode),)
        delta = 1.0 / M if spec.mode == tr.KNOWN_VELOCITY else 2.0 / M
    return Resolved(M, float(p), gammas[0], gammas, delta, default_eta(spec.d, M))


def slot_lengths(slots: Sequence[int]) -> list[int]:
    return [slots[0]] + [slots[j] - slots[j - 1] for j in range(1, len(slots))]


@dataclass
class TrialRecord:
    index: int
    accepted: bool
    excess: bool
    error: float
    visited: int
    resamples: int
    true_s: list[list[float]]
    true_v: list[list[float]]
    est_s: list[list[float]]
    est_v: list[list[float]]
    decode_time: float = 0.0


@dataclass
class RunSummary:
    trials: int
    excess_count: int
    excess_probability: float
    ci_low: float
    ci_high: float
    acceptance_rate: float
    resamples: int
    mean_decode_time: float
    median_decode_time: float


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    ph = successes / trials
    den = 1.0 + z * z / trials
    centre = (ph + z * z / (2 * trials)) / den
    half = z * math.sqrt(ph * (1 - ph) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


# ---------------------------------------------------------------- one trial


def trial_streams(seed: int, index: int) -> tuple[np.random.Generator, ...]:
    """Independent generators for targets, codebook and noise of one trial."""
    children = np.random.SeedSequence([seed, index]).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


@lru_cache(maxsize=4)
def _free_grid(
    n: int, M: int, d: int, v_plus: float, motion: str, cap: int, cells: tuple[int, ...] | None = None
) -> TrajectoryGrid:
    return tr.enumerate_trajectories(n, M, d, v_plus, tr.FREE, cap=cap, cells=cells, motion=motion)


def sample_targets(rng: np.random.Generator, k: int, d: int, v_plus: float, slots: int = 1) -> list[list[TargetState]]:
    """``slots`` velocity draws per target; uniform locations on [0,1]^d."""
    out = []
    for _ in range(k):
        s = rng.random(d)
        out.append([TargetState(s, rng.uniform(-v_plus, v_plus, d)) for _ in range(slots)])
    return out


def _piecewise_path(
    states: Sequence[TargetState], lengths: Sequence[int], motion: str
) -> np.ndarray:
    """Locations at global times ``0..sum(lengths)``; ``states[j].s`` is ignored for j > 0."""
    pts = [np.atleast_2d(tr.locate(states[0], 0, motion))]
    cur = states[0].s
    for j, L in enumerate(lengths):
        st = TargetState(cur, states[j].v)
        seg = tr.locate(st, np.arange(1, L + 1), motion)
        pts.append(seg)
        cur = seg[-1]
    return np.concatenate(pts, axis=0)


@dataclass
class _Instance:
    truth: list[list[TargetState]]
    grids: TrajectoryGrid | list[TrajectoryGrid] | None
    true_flats: list[np.ndarray]
    resamples: int


def _build_instance(spec: ExperimentSpec, res: Resolved, rng: np.random.Generator) -> _Instance:
    n, M, d, k = spec.n, res.M, spec.d, spec.k
    for attempt in range(MAX_RESAMPLES):
        if spec.mode == PIECEWISE:
            lengths = slot_lengths(spec.slots)
            truth = sample_targets(rng, k, d, spec.v_plus, len(lengths))
            flats = []
            starts = [t[0].s for t in truth]
            for j, L in enumerate(lengths):
                radix = spec.cells or (L * M,) * d
                st = [TargetState(starts[t], truth[t][j].v) for t in range(k)]
                flats.append(tr.states_flats(st, L, radix, spec.motion))
                starts = [tr.locate(s, L, spec.motion) for s in st]
            grids = _free_grid(lengths[0], M, d, spec.v_plus, spec.motion, spec.cap, spec.cells)
            first = flats[0]
        else:
            truth = sample_targets(rng, k, d, spec.v_plus)
            states = [t[0] for t in truth]
            if spec.mode == tr.FREE:
                grids = _free_grid(n, M, d, spec.v_plus, spec.motion, spec.cap, spec.cells)
            elif spec.mode == tr.KNOWN_VELOCITY:
                vs = {tuple(st.v) for st in states}
                per = [
                    tr.enumerate_trajectories(n, M, d, spec.v_plus, tr.KNOWN_VELOCITY, st.v, spec.cap, spec.cells, spec.motion)
                    for st in states
                ]
                grids = per[0] if len(vs) == 1 else per
            else:
                grids = [
                    tr.enumerate_trajectories(n, M, d, spec.v_plus, tr.KNOWN_INITIAL, st.s, spec.cap, spec.cells, spec.motion)
                    for st in states
                ]
            radix = (grids if isinstance(grids, TrajectoryGrid) else grids[0]).radices
            first = tr.states_flats(states, n, radix, spec.motion)
            flats = [first]
        if len({tuple(f) for f in first}) == k:
            return _Instance(truth, grids, flats, attempt)
    raise DomainError("could not draw pairwise distinct quantized trajectories; increase n*M")


def _codebook(spec: ExperimentSpec, rows: int, cols: int, p: float, rng: np.random.Generator, slot: int) -> Codebook:
    if spec.fresh_codebook:
        return generate(rows, cols, p, rng)
    return generate(rows, cols, p, np.random.SeedSequence([spec.seed, 0x5EED, slot]))


def run_trial(spec: ExperimentSpec, res: Resolved, index: int, decoder: str = "single") -> TrialRecord:
    """Simulate and decode one trial. ``decoder`` is ``single`` or ``multi``."""
    with threadpool_limits(1):
        return _run_trial(spec, res, index, decoder)


def _run_trial(spec: ExperimentSpec, res: Resolved, index: int, decoder: str) -> TrialRecord:
    r_tgt, r_cb, r_noise = trial_streams(spec.seed, index)
    inst = _build_instance(spec, res, r_tgt)
    k, d = spec.k, spec.d
    cfg = DecodeConfig(spec.channel, res.p, k, res.gamma, spec.mode if spec.mode != PIECEWISE else tr.FREE)

    if spec.mode == PIECEWISE:
        lengths = slot_lengths(spec.slots)
        cbs, ys = [], []
        for j, L in enumerate(lengths):
            cols = math.prod(spec.cells or (L * res.M,) * d)
            cb = _codebook(spec, L, cols, res.p, r_cb, j)
            _, y, _ = oracle_responses(cb, inst.true_flats[j], spec.channel, r_noise)
            cbs.append(cb)
            ys.append(y)
        t0 = time.perf_counter()
        outs = decode_piecewise(
            inst.grids, cbs, ys, cfg, lengths, res.M, spec.v_plus, res.gammas, spec.cap, spec.cells, spec.motion
        )
        dt = time.perf_counter() - t0
        accepted = all(o.accepted for o in outs)
        visited = sum(o.visited for o in outs)
        est_paths = [
            _piecewise_path([outs[j].estimates[t] for j in range(len(lengths))], lengths, spec.motion)
            for t in range(k)
        ]
        true_paths = [_piecewise_path(inst.truth[t], lengths, spec.motion) for t in range(k)]
        err = max(min(float(np.max(np.abs(tp - ep))) for ep in est_paths) for tp in true_paths)
        est_first = outs[0].estimates
        est_s = [list(map(float, e.s)) for e in est_first]
        est_v = [[float(x) for j in range(len(lengths)) for x in outs[j].estimates[t].v] for t in range(k)]
        true_v = [[float(x) for st in inst.truth[t] for x in st.v] for t in range(k)]
    else:
        grid0 = inst.grids if isinstance(inst.grids, TrajectoryGrid) else inst.grids[0]
        cb = _codebook(spec, spec.n, grid0.columns, res.p, r_cb, 0)
        _, y, _ = oracle_responses(cb, inst.true_flats[0], spec.channel, r_noise)
        states = [t[0] for t in inst.truth]
        known = states if spec.mode != tr.FREE else None
        t0 = time.perf_counter()
        if decoder == "multi":
            out = decode_multi_threshold_baseline(inst.grids, cb, y, cfg, known=known)
        else:
            out = decode_single_threshold(inst.grids, cb, y, cfg, known=known)
        dt = time.perf_counter() - t0
        accepted, visited = out.accepted, out.visited
        err = max(min(tr.excess_error(ts, es, spec.n, spec.motion) for es in out.estimates) for ts in states)
        est_s = [list(map(float, e.s)) for e in out.estimates]
        est_v = [list(map(float, e.v)) for e in out.estimates]
        true_v = [list(map(float, t[0].v)) for t in inst.truth]

    return TrialRecord(
        index=index,
        accepted=bool(accepted),
        excess=bool(err > res.delta),
        error=err,
        visited=int(visited),
        resamples=inst.resamples,
        true_s=[list(map(float, t[0].s)) for t in inst.truth],
        true_v=true_v,
        est_s=est_s,
        est_v=est_v,
        decode_time=dt,
    )


# ---------------------------------------------------------------- runs


def _worker_batch(args: tuple[ExperimentSpec, Resolved, list[int], str]) -> list[TrialRecord]:
    spec, res, idx, decoder = args
    return [run_trial(spec, res, i, decoder) for i in idx]


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def _map_trials(
    spec: ExperimentSpec, res: Resolved, indices: Sequence[int], workers: int, decoder: str = "single"
) -> list[TrialRecord]:
    indices = list(indices)
    if workers <= 1 or len(indices) < 2:
        return [run_trial(spec, res, i, decoder) for i in indices]
    nb = min(len(indices), workers * 4)
    batches = [indices[j::nb] for j in range(nb)]
    out: list[TrialRecord] = []
    with ProcessPoolExecutor(max_workers=workers) as ex:
        for recs in ex.map(_worker_batch, [(spec, res, b, decoder) for b in batches]):
            out.extend(recs)
    out.sort(key=lambda r: r.index)
    return out


def summarize(records: Sequence[TrialRecord]) -> RunSummary:
    n = len(records)
    x = sum(r.excess for r in records)
    lo, hi = wilson_interval(x, n)
    times = [r.decode_time for r in records]
    return RunSummary(
        trials=n,
        excess_count=x,
        excess_probability=x / n if n else float("nan"),
        ci_low=lo,
        ci_high=hi,
        acceptance_rate=sum(r.accepted for r in records) / n if n else float("nan"),
        resamples=sum(r.resamples for r in records),
        mean_decode_time=statistics.fmean(times) if times else float("nan"),
        median_decode_time=statistics.median(times) if times else float("nan"),
    )


def run_trials(
    spec: ExperimentSpec, workers: int = 1, resolved: Resolved | None = None
) -> tuple[Resolved, RunSummary, list[TrialRecord]]:
    """Run ``spec.trials`` independent trials and summarize them."""
    res = resolved or resolve(spec)
    if spec.mode in (tr.FREE, PIECEWISE):
        n0 = spec.slots[0] if spec.mode == PIECEWISE else spec.n
        _free_grid(n0, res.M, spec.d, spec.v_plus, spec.motion, spec.cap, spec.cells)  # fail fast on the cap
    recs = _map_trials(spec, res, range(spec.trials), workers)
    return res, summarize(recs), recs


# ---------------------------------------------------------------- resolution curve


@dataclass
class CurvePoint:
    n: int
    M: int
    empirical_nats: float
    excess_probability: float
    achievable_nats: float
    converse_nats: float
    evaluations: int


def _theory(spec: ExperimentSpec, n: int) -> tuple[float, float]:
    if spec.mode == tr.KNOWN_VELOCITY:
        v = bounds.second_order(spec.channel, n, spec.k, spec.d, spec.epsilon, spec.v_plus, "known_velocity_thm5")
        return v, v
    if spec.mode == tr.KNOWN_INITIAL:
        v = bounds.second_order(spec.channel, n, spec.k, spec.d, spec.epsilon, spec.v_plus, "known_initial_thm6")
        c = bounds.second_order(spec.channel, n, spec.k, spec.d, spec.epsilon, spec.v_plus, "converse_thm4")
        return v, c
    a = bounds.second_order(spec.channel, n, spec.k, spec.d, spec.epsilon, spec.v_plus, "achievable_thm4")
    c = bounds.second_order(spec.channel, n, spec.k, spec.d, spec.epsilon, spec.v_plus, "converse_thm4")
    return a, c


def resolution_curve(
    spec: ExperimentSpec,
    ns: Sequence[int],
    workers: int = 1,
    m_max: int = 64,
    progress: Callable[[str], None] | None = None,
) -> list[CurvePoint]:
    """Largest ``M`` whose empirical excess probability stays at or below ``spec.epsilon``, per ``n``.

    The search doubles ``M`` until the target fails (or ``m_max``) and then
    bisects, assuming the excess probability grows with ``M``.
    """
    if not 0.0 < spec.epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    if spec.mode == PIECEWISE:
        raise DomainError("resolution curves are defined for single-slot modes")
    out = []
    for n in ns:
        cache: dict[int, RunSummary] = {}

        def ok(M: int) -> bool:
            if M not in cache:
                s = replace(spec, n=n, M=M)
                cache[M] = run_trials(s, workers)[1]
                if progress:
                    progress(f"n={n} M={M} excess={cache[M].excess_probability:.4f}")
            return cache[M].excess_probability <= spec.epsilon

        good = 0
        M = 1
        bad = None
        while M <= m_max:
            if ok(M):
                good = M
                M *= 2
            else:
                bad = M
                break
        if bad is None:
            bad = min(M, m_max + 1)
            if good == m_max:
                bad = m_max + 1
        lo, hi = good, bad
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid
        scale = 1.0 if spec.mode == tr.KNOWN_VELOCITY else 2.0
        emp = math.log(lo / scale) if lo >= 1 else -math.inf
        ach, con = _theory(spec, n)
        out.append(
            CurvePoint(n, lo, emp, cache[lo].excess_probability if lo in cache else float("nan"), ach, con, len(cache))
        )
    return out


# ---------------------------------------------------------------- runtime bench


@dataclass
class BenchRow:
    k: int
    n: int
    M: int
    trials: int
    single_mean: float
    multi_mean: float
    ratio: float
    agreement: float


BENCH_GRID = ((2, 60), (3, 70), (4, 85))


def _bench_batch(args) -> list[tuple[int, float, float, bool, bool]]:
    spec, res, idx = args
    rows = []
    for i in idx:
        a = run_trial(spec, res, i, "single")
        b = run_trial(spec, res, i, "multi")
        rows.append((i, a.decode_time, b.decode_time, a.accepted, b.accepted))
    return rows


def runtime_bench(
    base: ExperimentSpec,
    grid: Sequence[tuple[int, int]] = BENCH_GRID,
    workers: int = 1,
) -> list[BenchRow]:
    """Paired decode timings of the single- and multi-threshold decoders.

    Both decoders see identical instances (same trial seeds); only the decode
    call is timed.
    """
    out = []
    for k, n in grid:
        spec = replace(base, k=k, n=n)
        res = resolve(spec)
        idx = list(range(spec.trials))
        if workers <= 1:
            rows = _bench_batch((spec, res, idx))
        else:
            nb = min(len(idx), workers * 4)
            with ProcessPoolExecutor(max_workers=workers) as ex:
                rows = [r for part in ex.map(_bench_batch, [(spec, res, idx[j::nb]) for j in range(nb)]) for r in part]
        rows.sort()
        s = statistics.fmean(r[1] for r in rows)
        m = statistics.fmean(r[2] for r in rows)
        agree = sum(r[3] == r[4] for r in rows) / len(rows)
        out.append(BenchRow(k, n, res.M, len(rows), s, m, s / m if m > 0 else float("nan"), agree))
    return out


def as_dict(obj) -> dict:
    return asdict(obj)
