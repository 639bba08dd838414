"""Target motion, grid quantization and quantized-trajectory enumeration.

Targets move with constant velocity inside the unit cube. With the default
``"reflect"`` motion the coordinate bounces off the walls at 0 and 1; the
``"wrap"`` motion is periodic with period 1 (used for steering angles).

Enumeration is exact. Along one dimension the quantized trajectory of
``(s, v)`` only changes when ``s + i*v`` crosses a multiple of ``1/cells`` for
some time ``i``. Those crossings are lines in the ``(s, v)`` plane which meet
only at velocities of the form ``a / (j*cells)`` with ``1 <= j <= n``. Between
two consecutive critical velocities the lines do not cross, so sampling the
midpoint velocity and the midpoints between consecutive crossing points in
``s`` visits every face of the arrangement, i.e. every trajectory realised by
a set of initial states of positive measure.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError, ResourceError, SchemaError

FREE = "free"
KNOWN_VELOCITY = "known_velocity"
KNOWN_INITIAL = "known_initial"
MODES = (FREE, KNOWN_VELOCITY, KNOWN_INITIAL)

REFLECT = "reflect"
WRAP = "wrap"

DEFAULT_CAP = 2_000_000


@dataclass(frozen=True)
class TargetState:
    s: NDArray[np.float64]
    v: NDArray[np.float64]

    def __post_init__(self) -> None:
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if s.shape != v.shape or s.ndim != 1:
            raise DomainError("s and v must be d-vectors of equal length")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.s.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TargetState):
            return NotImplemented
        return bool(np.array_equal(self.s, other.s) and np.array_equal(self.v, other.v))

    def __hash__(self) -> int:
        return hash((self.s.tobytes(), self.v.tobytes()))


@dataclass(frozen=True)
class QuantizedTrajectory:
    cells: NDArray[np.int64]  # (n, d)
    flat: NDArray[np.int64]  # (n,)


def fold(u: ArrayLike, motion: str = REFLECT) -> NDArray[np.float64]:
    """Map an unconstrained coordinate into [0, 1] under the given motion."""
    u = np.asarray(u, dtype=float)
    if motion == WRAP:
        return np.mod(u, 1.0)
    m = np.mod(u, 2.0)
    return np.where(m <= 1.0, m, 2.0 - m)


def locate(state: TargetState, i: int | ArrayLike, motion: str = REFLECT) -> NDArray[np.float64]:
    """Location at time(s) ``i``; shape ``(d,)`` for scalar ``i`` else ``(len(i), d)``."""
    ii = np.asarray(i, dtype=float)
    if np.any(ii < 0):
        raise DomainError("time index must be nonnegative")
    if ii.ndim == 0:
        return fold(state.s + float(ii) * state.v, motion)
    return fold(state.s[None, :] + ii[:, None] * state.v[None, :], motion)


def quantize(x: ArrayLike, cells: int) -> NDArray[np.int64]:
    """Cell index ``ceil(x * cells)`` in ``[1, cells]`` (0 maps to cell 1)."""
    c = np.ceil(np.asarray(x, dtype=float) * cells).astype(np.int64)
    return np.clip(c, 1, cells)


def quantize_location(x: float, n: int, M: int) -> int:
    if not 0.0 <= x <= 1.0:
        raise DomainError("location must lie in [0, 1]")
    return int(quantize(x, n * M))


def _radices(width: int | Sequence[int], d: int) -> tuple[int, ...]:
    if isinstance(width, (int, np.integer)):
        return (int(width),) * d
    r = tuple(int(w) for w in width)
    if len(r) != d:
        raise DomainError("one radix per dimension is required")
    return r


def flatten(cells: ArrayLike, width: int | Sequence[int]) -> int | NDArray[np.int64]:
    """Mixed-radix flat index ``1 + sum_j (c_j - 1) * prod_{j' > j} R_j'``.

    ``cells`` has shape ``(..., d)``; with a single width ``R`` this is the
    usual row-major numbering of the ``R**d`` grid cells.
    """
    c = np.asarray(cells, dtype=np.int64)
    if c.ndim == 0:
        c = c[None]
    d = c.shape[-1]
    radix = _radices(width, d)
    if np.any(c < 1) or np.any(c > np.asarray(radix)):
        raise DomainError("cell index out of range")
    out = np.zeros(c.shape[:-1], dtype=np.int64)
    for j in range(d):
        out = out * radix[j] + (c[..., j] - 1)
    out = out + 1
    return int(out) if out.ndim == 0 else out


def unflatten(flat: ArrayLike, width: int | Sequence[int], d: int) -> NDArray[np.int64]:
    radix = _radices(width, d)
    rem = np.asarray(flat, dtype=np.int64) - 1
    out = np.empty(rem.shape + (d,), dtype=np.int64)
    for j in range(d - 1, -1, -1):
        out[..., j] = rem % radix[j] + 1
        rem = rem // radix[j]
    return out


def quantized_trajectory(
    state: TargetState,
    n: int,
    cells: int | Sequence[int],
    motion: str = REFLECT,
    start: int = 1,
) -> QuantizedTrajectory:
    """Cells visited at times ``start .. start+n-1``."""
    radix = _radices(cells, state.d)
    loc = locate(state, np.arange(start, start + n), motion)
    c = np.stack([quantize(loc[:, j], radix[j]) for j in range(state.d)], axis=1)
    return QuantizedTrajectory(c, np.asarray(flatten(c, radix)).reshape(n))


def excess_error(true_state: TargetState, est_state: TargetState, n: int, motion: str = REFLECT) -> float:
    """Largest sup-norm location error over times ``0..n``."""
    t = np.arange(n + 1)
    diff = locate(true_state, t, motion) - locate(est_state, t, motion)
    return float(np.max(np.abs(diff)))


def excess_event(
    true_set: Sequence[TargetState],
    est_set: Sequence[TargetState],
    n: int,
    delta: float,
    motion: str = REFLECT,
) -> bool:
    """True when some target is farther than ``delta`` from every estimate."""
    if len(true_set) != len(est_set):
        raise DomainError("true and estimated sets must have equal size")
    for tr in true_set:
        if min(excess_error(tr, es, n, motion) for es in est_set) > delta:
            return True
    return False


# ---------------------------------------------------------------- enumeration


def _traj_rows(s: NDArray, v: NDArray, n: int, cells: int, motion: str) -> NDArray[np.int32]:
    i = np.arange(1, n + 1, dtype=float)
    return quantize(fold(s[:, None] + v[:, None] * i[None, :], motion), cells).astype(np.int32)


def _merge_close(x: NDArray, tol: float = 1e-13) -> NDArray:
    """Sorted unique values with rounding-level near-duplicates merged."""
    x = np.unique(x)
    if x.size < 2:
        return x
    keep = np.concatenate(([True], np.diff(x) > tol))
    return x[keep]


def _s_midpoints(v: float, n: int, cells: int, lo: float = 0.0, hi: float = 1.0) -> NDArray:
    """Midpoints between consecutive cell-crossing values of ``s`` for fixed ``v``."""
    i = np.arange(1, n + 1, dtype=float)
    offs = np.mod(-i * v * cells, 1.0)
    bp = (offs[:, None] + np.arange(cells + 1)[None, :]).ravel() / cells
    bp = bp[(bp > lo) & (bp < hi)]
    bp = _merge_close(np.concatenate(([lo, hi], bp)))
    return 0.5 * (bp[:-1] + bp[1:])


def _v_midpoints(s: float, n: int, cells: int, v_plus: float) -> NDArray:
    """Midpoints between consecutive cell-crossing velocities for fixed ``s``."""
    if v_plus == 0.0:
        return np.zeros(1)
    pts = [np.array([-v_plus, v_plus])]
    for i in range(1, n + 1):
        lo = math.floor((s - i * v_plus) * cells) - 1
        hi = math.ceil((s + i * v_plus) * cells) + 1
        c = np.arange(lo, hi + 1) / cells
        pts.append((c - s) / i)
    bp = np.concatenate(pts)
    bp = _merge_close(bp[(bp >= -v_plus) & (bp <= v_plus)])
    return 0.5 * (bp[:-1] + bp[1:])


def _critical_velocities(n: int, cells: int, v_plus: float) -> NDArray:
    pts = [np.array([-v_plus, v_plus])]
    for j in range(1, n + 1):
        top = math.ceil(v_plus * j * cells)
        pts.append(np.arange(-top, top + 1) / (j * cells))
    bp = np.concatenate(pts)
    return np.unique(bp[(bp >= -v_plus) & (bp <= v_plus)])


class _Dedup:
    """Incremental de-duplication keeping the lexicographically smallest (s, v)."""

    def __init__(self, n: int, cap: int):
        self.n = n
        self.cap = cap
        self.rows = np.empty((0, n), dtype=np.int32)
        self.s = np.empty(0)
        self.v = np.empty(0)
        self._pending: list[tuple[NDArray, NDArray, NDArray]] = []
        self._pending_size = 0

    def add(self, rows: NDArray, s: NDArray, v: NDArray) -> None:
        self._pending.append((rows, s, v))
        self._pending_size += len(rows)
        if self._pending_size > 500_000:
            self.flush()

    def flush(self) -> None:
        if not self._pending:
            return
        rows = np.concatenate([self.rows] + [p[0] for p in self._pending])
        s = np.concatenate([self.s] + [p[1] for p in self._pending])
        v = np.concatenate([self.v] + [p[2] for p in self._pending])
        self._pending, self._pending_size = [], 0
        order = np.lexsort((v, s))
        rows, s, v = rows[order], s[order], v[order]
        _, first = np.unique(rows, axis=0, return_index=True)
        self.rows, self.s, self.v = rows[first], s[first], v[first]
        if len(self.rows) > self.cap:
            raise ResourceError(
                f"trajectory enumeration exceeds the cap of {self.cap} entries"
            )

    def result(self) -> tuple[NDArray, NDArray, NDArray]:
        self.flush()
        return self.rows, self.s, self.v


def enumerate_1d(
    n: int,
    cells: int,
    v_plus: float,
    mode: str = FREE,
    known: float | None = None,
    motion: str = REFLECT,
    cap: int = DEFAULT_CAP,
) -> tuple[NDArray[np.int32], NDArray, NDArray]:
    """All one-dimensional quantized trajectories with representatives.

    Returns ``(rows, s, v)`` with ``rows`` of shape ``(N, n)`` sorted
    lexicographically.
    """
    dd = _Dedup(n, cap)
    if mode == KNOWN_VELOCITY:
        v = float(known)
        s = _s_midpoints(v, n, cells)
        dd.add(_traj_rows(s, np.full_like(s, v), n, cells, motion), s, np.full_like(s, v))
    elif mode == KNOWN_INITIAL:
        s0 = float(known)
        v = _v_midpoints(s0, n, cells, v_plus)
        dd.add(_traj_rows(np.full_like(v, s0), v, n, cells, motion), np.full_like(v, s0), v)
    elif mode == FREE:
        if v_plus == 0.0:
            vs = np.zeros(1)
        else:
            crit = _critical_velocities(n, cells, v_plus)
            vs = 0.5 * (crit[:-1] + crit[1:])
        work = len(vs) * n * (cells + 1)
        if work > 50 * cap * max(n, 1):
            raise ResourceError(
                f"trajectory enumeration work {work} exceeds the configured budget"
            )
        for v in vs:
            s = _s_midpoints(float(v), n, cells)
            dd.add(_traj_rows(s, np.full_like(s, v), n, cells, motion), s, np.full_like(s, v))
    else:
        raise DomainError(f"unknown enumeration mode {mode!r}")
    return dd.result()


@dataclass(frozen=True)
class TrajectoryGrid:
    """Deduplicated quantized trajectories with representative states.

    ``flats`` has shape ``(N, n)`` and holds the flat cell index of every
    entry at times ``1..n``; ``reps_s``/``reps_v`` have shape ``(N, d)``.
    """

    n: int
    M: int
    d: int
    v_plus: float
    mode: str
    flats: NDArray[np.int64]
    reps_s: NDArray[np.float64]
    reps_v: NDArray[np.float64]
    radices: tuple[int, ...]
    motion: str = REFLECT

    def __len__(self) -> int:
        return len(self.flats)

    @property
    def columns(self) -> int:
        return int(np.prod(self.radices))

    def state(self, idx: int) -> TargetState:
        return TargetState(self.reps_s[idx].copy(), self.reps_v[idx].copy())

    def trajectory(self, idx: int) -> QuantizedTrajectory:
        f = self.flats[idx]
        return QuantizedTrajectory(unflatten(f, self.radices, self.d), f.copy())

    def index_of(self, flat: ArrayLike) -> int:
        """Row index of a flat sequence or -1 when absent."""
        hit = np.nonzero(np.all(self.flats == np.asarray(flat)[None, :], axis=1))[0]
        return int(hit[0]) if hit.size else -1


def trajectory_bound(n: int, M: int, d: int, v_plus: float, mode: str = FREE) -> float:
    if mode == KNOWN_VELOCITY:
        return float(M) ** d
    if mode == KNOWN_INITIAL:
        return ((2 * n * v_plus + 3) * n**3 * M) ** d
    return ((2 * n * v_plus + 3) * n**4 * M**2) ** d


def enumerate_trajectories(
    n: int,
    M: int,
    d: int,
    v_plus: float,
    mode: str = FREE,
    known: ArrayLike | None = None,
    cap: int = DEFAULT_CAP,
    cells: Sequence[int] | None = None,
    motion: str = REFLECT,
) -> TrajectoryGrid:
    """Enumerate the set of quantized trajectories.

    ``free`` sweeps both initial location and velocity, ``known_velocity``
    sweeps the initial location for the velocity ``known`` on the coarse
    ``M``-cell grid, ``known_initial`` sweeps the velocity for the initial
    location ``known``. ``cells`` overrides the per-dimension cell count
    (default ``n*M``, or ``M`` for ``known_velocity``).
    """
    if n < 1 or M < 1 or d < 1:
        raise DomainError("n, M and d must be positive")
    if v_plus < 0:
        raise DomainError("v_plus must be nonnegative")
    if mode not in MODES:
        raise DomainError(f"unknown enumeration mode {mode!r}")
    if mode != FREE:
        if known is None:
            raise DomainError(f"mode {mode} needs the known per-dimension values")
        kv = np.atleast_1d(np.asarray(known, dtype=float))
        if kv.size != d:
            raise DomainError("known values must be a d-vector")
    else:
        kv = np.full(d, np.nan)
    if cells is None:
        radix = (M if mode == KNOWN_VELOCITY else n * M,) * d
    else:
        radix = _radices(cells, d)

    per_dim = [
        enumerate_1d(n, radix[j], v_plus, mode, None if mode == FREE else kv[j], motion, cap)
        for j in range(d)
    ]
    counts = [len(p[0]) for p in per_dim]
    total = math.prod(counts)
    if total > cap:
        raise ResourceError(f"trajectory enumeration has {total} entries, above the cap of {cap}")

    idx = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), axis=-1).reshape(-1, d)
    flats = np.zeros((total, n), dtype=np.int64)
    reps_s = np.empty((total, d))
    reps_v = np.empty((total, d))
    for j in range(d):
        rows, s, v = per_dim[j]
        flats = flats * radix[j] + (rows[idx[:, j]].astype(np.int64) - 1)
        reps_s[:, j] = s[idx[:, j]]
        reps_v[:, j] = v[idx[:, j]]
    flats += 1
    return TrajectoryGrid(n, M, d, float(v_plus), mode, flats, reps_s, reps_v, tuple(radix), motion)


# ---------------------------------------------------------------- cache file

_MAGIC = b"MTGRID01"
_HEADER = struct.Struct("<8sqqqdq")


def save_grid(grid: TrajectoryGrid, path: str | Path) -> None:
    """Binary cache: magic, n, M, d, v_plus, count, then flats, reps_s, reps_v, radices."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, grid.n, grid.M, grid.d, grid.v_plus, len(grid)))
        fh.write(np.asarray(grid.radices, dtype="<i8").tobytes())
        fh.write(grid.mode.encode().ljust(16, b"\0"))
        fh.write(grid.motion.encode().ljust(8, b"\0"))
        fh.write(grid.flats.astype("<i8").tobytes())
        fh.write(grid.reps_s.astype("<f8").tobytes())
        fh.write(grid.reps_v.astype("<f8").tobytes())


def load_grid(path: str | Path) -> TrajectoryGrid:
    raw = Path(path).read_bytes()
    magic, n, M, d, v_plus, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise SchemaError("not a trajectory grid cache file")
    off = _HEADER.size
    radices = tuple(int(r) for r in np.frombuffer(raw, "<i8", d, off))
    off += 8 * d
    mode = raw[off : off + 16].rstrip(b"\0").decode()
    motion = raw[off + 16 : off + 24].rstrip(b"\0").decode()
    off += 24
    flats = np.frombuffer(raw, "<i8", count * n, off).reshape(count, n).copy()
    off += 8 * count * n
    reps_s = np.frombuffer(raw, "<f8", count * d, off).reshape(count, d).copy()
    off += 8 * count * d
    reps_v = np.frombuffer(raw, "<f8", count * d, off).reshape(count, d).copy()
    return TrajectoryGrid(n, M, d, v_plus, mode, flats, reps_s, reps_v, radices, motion)


def states_flats(
    states: Iterable[TargetState],
    n: int,
    radices: Sequence[int],
    motion: str = REFLECT,
    start: int = 1,
) -> NDArray[np.int64]:
    """Flat trajectories for several states, shape ``(k, n)``."""
    return np.stack([quantized_trajectory(st, n, radices, motion, start).flat for st in states])
