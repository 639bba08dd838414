"""Threshold decoders over sets of quantized trajectories.

The single-threshold rule accepts the first candidate set (in lexicographic
order of entry indices) whose joint information density reaches ``gamma``.
With per-symbol densities ``a_i`` (OR = 1) and ``b_i`` (OR = 0) the score of a
set is ``sum(b) + sum_{i: or_i = 1} (a_i - b_i)``.

Candidates are scored in batches. A batch fixes the first ``k - 1`` members
(the prefix) of many candidates; for the OR vector ``u`` of a prefix the score
of the completed set with last codeword ``x`` is

    sum(b) + u @ c + ((1 - u) * c) @ x,     c = a - b,

so one matrix product scores every completion of every prefix in the batch.
The multi-threshold baseline evaluates all ``2**k - 1`` subset densities per
candidate the same way, which is where its extra cost comes from.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import trajectory as tr
from .channel import QueryChannel
from .codebook import Codebook, codewords
from .errors import DomainError
from .infodensity import DensityTables, build_tables, stats
from .trajectory import TargetState, TrajectoryGrid

PIECEWISE = "piecewise"


@dataclass(frozen=True)
class DecodeConfig:
    channel: QueryChannel
    p: float
    k: int
    gamma: float
    mode: str = tr.FREE
    fallback_s: float = 0.5
    fallback_v: float = 0.0
    full_scan: bool = False
    max_acceptors: int = 10_000
    chunk_entries: int = 1 << 20

    def __post_init__(self) -> None:
        if not math.isfinite(self.gamma) and self.gamma != math.inf:
            raise DomainError("gamma must be finite (or +inf to force rejection)")
        if self.k < 1:
            raise DomainError("k must be positive")


@dataclass
class DecodeResult:
    estimates: list[TargetState]
    accepted: bool
    score: float
    visited: int
    elapsed: float
    indices: tuple[int, ...] | None = None
    acceptors: list[tuple[int, ...]] = field(default_factory=list)


def score_set(tables: DensityTables, cws: ArrayLike, y: ArrayLike) -> float:
    """Joint density of ``k`` codewords (rows of ``cws``) against responses ``y``."""
    x = np.atleast_2d(np.asarray(cws))
    yy = np.asarray(y, dtype=float)
    if yy.size == 0:
        return 0.0
    a, b = tables.values(tables.k, yy)
    orv = x.max(axis=0).astype(bool)
    return float(np.sum(np.where(orv, a, b)))


def default_lambdas(channel: QueryChannel, p: float, k: int) -> dict[int, float]:
    """Midpoint slack ``0.5 (C(p,k) - C(p,t))`` for every proper subset size ``t``."""
    ck = stats(channel, p, k, k).C
    return {t: 0.5 * (ck - stats(channel, p, t, k).C) for t in range(1, k)}


# ---------------------------------------------------------------- candidates


class _Space:
    """Candidate k-tuples: either k-subsets of one grid or a product of per-target grids."""

    def __init__(self, grids: TrajectoryGrid | Sequence[TrajectoryGrid], k: int, cb: Codebook):
        if isinstance(grids, TrajectoryGrid):
            self.product = False
            self.grids = [grids] * k
            x = codewords(cb, grids.flats).astype(np.float64)
            self.X = [x] * k
            self.ids = None
        else:
            if len(grids) != k:
                raise DomainError("one grid per target is required in product mode")
            self.product = True
            self.grids = list(grids)
            self.X = [codewords(cb, g.flats).astype(np.float64) for g in self.grids]
            allf = np.concatenate([g.flats for g in self.grids])
            _, inv = np.unique(allf, axis=0, return_inverse=True)
            inv = inv.ravel()
            cuts = np.cumsum([0] + [len(g) for g in self.grids])
            self.ids = [inv[cuts[t] : cuts[t + 1]] for t in range(k)]
        self.k = k
        self.sizes = [len(g) for g in self.grids]

    def prefixes(self, batch: int) -> Iterator[NDArray[np.int64]]:
        r = self.k - 1
        if r == 0:
            yield np.zeros((1, 0), dtype=np.int64)
            return
        if self.product:
            it = itertools.product(*[range(s) for s in self.sizes[:r]])
        else:
            it = itertools.combinations(range(self.sizes[0]), r)
        while True:
            chunk = np.fromiter(
                itertools.chain.from_iterable(itertools.islice(it, batch)), dtype=np.int64
            )
            if chunk.size == 0:
                return
            yield chunk.reshape(-1, r)

    def valid(self, pref: NDArray[np.int64]) -> NDArray[np.bool_]:
        """Mask of admissible last members for each prefix row."""
        n_last = self.sizes[-1]
        cols = np.arange(n_last)[None, :]
        if not self.product:
            if pref.shape[1] == 0:
                return np.ones((1, n_last), dtype=bool)
            return cols > pref[:, -1:]
        ok = np.ones((len(pref), n_last), dtype=bool)
        last_ids = self.ids[-1][None, :]
        pids = np.stack([self.ids[t][pref[:, t]] for t in range(pref.shape[1])], axis=1) if pref.shape[1] else None
        for t in range(pref.shape[1]):
            ok &= last_ids != pids[:, t : t + 1]
            for u in range(t):
                ok &= (pids[:, t] != pids[:, u])[:, None]
        return ok

    def prefix_or(self, pref: NDArray[np.int64], members: Sequence[int]) -> NDArray[np.float64]:
        n = self.X[0].shape[1]
        u = np.zeros((len(pref), n))
        for t in members:
            np.maximum(u, self.X[t][pref[:, t]], out=u)
        return u

    def states(self, idx: Sequence[int]) -> list[TargetState]:
        return [self.grids[t].state(int(i)) for t, i in enumerate(idx)]


def _batch_rows(space: _Space, cfg: DecodeConfig) -> int:
    return max(1, cfg.chunk_entries // max(1, space.sizes[-1]))


def _fallback(cfg: DecodeConfig, d: int, known: Sequence[TargetState] | None) -> list[TargetState]:
    if cfg.mode == tr.KNOWN_VELOCITY and known is not None:
        return [TargetState(np.full(d, cfg.fallback_s), st.v.copy()) for st in known]
    if cfg.mode == tr.KNOWN_INITIAL and known is not None:
        return [TargetState(st.s.copy(), np.full(d, cfg.fallback_v)) for st in known]
    return [TargetState(np.full(d, cfg.fallback_s), np.full(d, cfg.fallback_v)) for _ in range(cfg.k)]


def _finish(space, cfg, known, hits, best_score, visited, t0) -> DecodeResult:
    if hits:
        idx = hits[0]
        return DecodeResult(space.states(idx), True, best_score, visited, time.perf_counter() - t0, idx, hits)
    return DecodeResult(_fallback(cfg, space.grids[0].d, known), False, float("nan"), visited, time.perf_counter() - t0)


def _scan(space: _Space, cfg: DecodeConfig, accept_fn) -> tuple[list[tuple[int, ...]], float, int]:
    """Walk candidates in lexicographic order; ``accept_fn(pref) -> (mask, full_scores)``."""
    hits: list[tuple[int, ...]] = []
    first_score = float("nan")
    visited = 0
    for pref in space.prefixes(_batch_rows(space, cfg)):
        valid = space.valid(pref)
        mask, full = accept_fn(pref)
        mask &= valid
        if not mask.any():
            visited += int(valid.sum())
            continue
        flat = np.flatnonzero(mask.ravel())
        if not cfg.full_scan:
            f = int(flat[0])
            visited += int(valid.ravel()[: f + 1].sum())
            r, c = divmod(f, mask.shape[1])
            return [tuple(int(v) for v in pref[r]) + (c,)], float(full[r, c]), visited
        visited += int(valid.sum())
        for f in flat:
            r, c = divmod(int(f), mask.shape[1])
            if not hits:
                first_score = float(full[r, c])
            if len(hits) < cfg.max_acceptors:
                hits.append(tuple(int(v) for v in pref[r]) + (c,))
    return hits, first_score, visited


def decode_single_threshold(
    grid: TrajectoryGrid | Sequence[TrajectoryGrid],
    cb: Codebook,
    y: ArrayLike,
    cfg: DecodeConfig,
    known: Sequence[TargetState] | None = None,
) -> DecodeResult:
    """First candidate set whose joint density reaches ``cfg.gamma``, else the fallback.

    ``grid`` is a single grid (candidates are k-subsets of distinct entries)
    or one grid per target (candidates are tuples, one entry per target, of
    distinct trajectories). ``known`` carries the known velocities or
    initial locations used for the fallback in the restricted modes.
    """
    t0 = time.perf_counter()
    space = _Space(grid, cfg.k, cb)
    yy = np.asarray(y, dtype=float)
    a, b = build_tables(cfg.channel, cfg.p, cfg.k).values(cfg.k, yy)
    c = a - b
    base0 = float(b.sum())
    xt = space.X[-1].T
    r = cfg.k - 1

    def accept(pref):
        u = space.prefix_or(pref, range(r))
        full = (base0 + u @ c)[:, None] + ((1.0 - u) * c) @ xt
        return full >= cfg.gamma, full

    hits, score, visited = _scan(space, cfg, accept)
    return _finish(space, cfg, known, hits, score, visited, t0)


def decode_multi_threshold_baseline(
    grid: TrajectoryGrid | Sequence[TrajectoryGrid],
    cb: Codebook,
    y: ArrayLike,
    cfg: DecodeConfig,
    lambdas: dict[int, float] | None = None,
    known: Sequence[TargetState] | None = None,
) -> DecodeResult:
    """Accept only when the full set and every proper subset pass their thresholds.

    A subset of size ``t`` must reach ``gamma - n C(p,t) - n lambda_t``.
    """
    t0 = time.perf_counter()
    k = cfg.k
    space = _Space(grid, k, cb)
    yy = np.asarray(y, dtype=float)
    n = yy.size
    tables = build_tables(cfg.channel, cfg.p, k)
    lam = default_lambdas(cfg.channel, cfg.p, k) if lambdas is None else dict(lambdas)
    per_t = {}
    for t in range(1, k + 1):
        a, b = tables.values(t, yy)
        if t == k:
            thr = cfg.gamma
        else:
            thr = cfg.gamma - n * stats(cfg.channel, cfg.p, t, k).C - n * lam[t]
        per_t[t] = (a - b, float(b.sum()), thr)
    subsets = [tuple(m for m in range(k) if mask >> m & 1) for mask in range(1, 1 << k)]
    subsets.sort(key=lambda s: (-len(s), s))  # full set first
    xt = space.X[-1].T
    last = k - 1

    def accept(pref):
        rows = len(pref)
        ok = None
        full = None
        for sub in subsets:
            c, base0, thr = per_t[len(sub)]
            head = [m for m in sub if m != last]
            u = space.prefix_or(pref, head)
            base = base0 + u @ c
            if last in sub:
                val = base[:, None] + ((1.0 - u) * c) @ xt
            else:
                val = np.broadcast_to(base[:, None], (rows, xt.shape[1]))
            passed = val >= thr
            if full is None:
                full = val
            ok = passed if ok is None else ok & passed
        return ok, full

    hits, score, visited = _scan(space, cfg, accept)
    return _finish(space, cfg, known, hits, score, visited, t0)


def decode_piecewise(
    first_grid: TrajectoryGrid,
    cbs: Sequence[Codebook],
    ys: Sequence[ArrayLike],
    cfg: DecodeConfig,
    slot_lengths: Sequence[int],
    M: int,
    v_plus: float,
    gammas: Sequence[float] | None = None,
    cap: int = tr.DEFAULT_CAP,
    cells: Sequence[int] | None = None,
    motion: str = tr.REFLECT,
) -> list[DecodeResult]:
    """Slot 1 in free mode, later slots in known-initial mode.

    Each later slot starts from every estimated target's location at the end
    of the previous slot. Slot-local time restarts at 0 at each boundary and
    slot ``j`` uses ``slot_lengths[j] * M`` cells per dimension unless
    ``cells`` overrides it.
    """
    B = len(slot_lengths)
    if not (len(cbs) == len(ys) == B):
        raise DomainError("one codebook and one response vector per slot are required")
    gam = list(gammas) if gammas is not None else [cfg.gamma] * B
    d = first_grid.d
    out = [decode_single_threshold(first_grid, cbs[0], ys[0], _with(cfg, gam[0], tr.FREE))]
    prev = out[0]
    for j in range(1, B):
        starts = [TargetState(tr.locate(st, slot_lengths[j - 1], motion), np.zeros(d)) for st in prev.estimates]
        scfg = _with(cfg, gam[j], tr.KNOWN_INITIAL)
        if not out[0].accepted:
            res = DecodeResult(_fallback(scfg, d, starts), False, float("nan"), 0, 0.0)
        else:
            grids = [
                tr.enumerate_trajectories(slot_lengths[j], M, d, v_plus, tr.KNOWN_INITIAL, st.s, cap, cells, motion)
                for st in starts
            ]
            res = decode_single_threshold(grids, cbs[j], ys[j], scfg, known=starts)
        out.append(res)
        prev = res
    return out


def _with(cfg: DecodeConfig, gamma: float, mode: str) -> DecodeConfig:
    return DecodeConfig(
        cfg.channel, cfg.p, cfg.k, gamma, mode, cfg.fallback_s, cfg.fallback_v,
        cfg.full_scan, cfg.max_acceptors, cfg.chunk_entries,
    )


def default_gamma(n: int, M: int, k: int, d: int, v_plus: float, mode: str = tr.FREE) -> float:
    """Threshold ``dk log(n^4 M^2) + n v_+``; ``dk log(n^3 M) + n v_+`` with known initial
    locations and ``dk log M + log(n) / 2`` with known velocities."""
    if mode == tr.KNOWN_VELOCITY:
        return d * k * math.log(M) + 0.5 * math.log(n)
    if mode == tr.KNOWN_INITIAL:
        return d * k * math.log(n**3 * M) + n * v_plus
    return d * k * math.log(float(n) ** 4 * M**2) + n * v_plus
