"""Information density of the OR multiple-access query channel and its moments.

Each of ``k`` targets contributes an i.i.d. Bern(p) codeword bit; the oracle
sees the OR of those bits and the response passes through the channel whose
noise level is fixed at ``h(p)``. For a subset of ``t`` inputs the density is

    iota_t(x_[t]; y) = log P(y | x_[t]) - log P_Y(y),

where ``P(y | x_[t])`` marginalizes the remaining ``k - t`` inputs: it equals
``P(y|1)`` when some bit in the subset is 1 and the mixture
``r P(y|0) + (1 - r) P(y|1)`` with ``r = (1-p)**(k-t)`` otherwise. The output
marginal is ``P_Y = (1-pi) P(y|0) + pi P(y|1)`` with ``pi = 1 - (1-p)**k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, optimize

from .channel import QueryChannel, log_likelihood, transmit
from .errors import DomainError, NumericalError

QUAD_EPSABS = 1e-10
TIE_TOL = 1e-9


@dataclass(frozen=True)
class ChannelStats:
    C: float
    V: float
    T: float


@dataclass(frozen=True)
class DensityTables:
    """Per-symbol densities for every subset size ``t`` in ``1..k``.

    ``values(t, y)`` returns ``(a, b)``: the density when the subset OR is 1
    and when it is 0. For the BSC ``bsc_table[t-1]`` is the 2x2 array indexed
    by ``[or_bit, y]``.
    """

    channel: QueryChannel
    p: float
    k: int

    @property
    def pi(self) -> float:
        return 1.0 - (1.0 - self.p) ** self.k

    def values(self, t: int, y: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return _densities(self.channel, self.p, t, self.k, np.asarray(y, dtype=float))

    @property
    def bsc_table(self) -> NDArray[np.float64]:
        if not self.channel.is_bsc:
            raise DomainError("finite tables exist only for the BSC")
        out = np.empty((self.k, 2, 2))
        for t in range(1, self.k + 1):
            a, b = self.values(t, np.array([0.0, 1.0]))
            out[t - 1, 1], out[t - 1, 0] = a, b
        return out


def build_tables(channel: QueryChannel, p: float, k: int) -> DensityTables:
    _check(p, 1, k)
    return DensityTables(channel, float(p), int(k))


def _check(p: float, t: int, k: int) -> None:
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    if k < 1 or not 1 <= t <= k:
        raise DomainError("subset size must satisfy 1 <= t <= k")


def _log_conditionals(
    channel: QueryChannel, p: float, t: int, k: int, y: NDArray
) -> tuple[NDArray, NDArray, NDArray]:
    """``log P(y|OR_t=1)``, ``log P(y|OR_t=0)`` and ``log P_Y(y)``."""
    l1 = np.asarray(log_likelihood(channel, 1, y, p), dtype=float)
    l0 = np.asarray(log_likelihood(channel, 0, y, p), dtype=float)
    r_all = (1.0 - p) ** k
    r_rest = (1.0 - p) ** (k - t)
    ly = np.logaddexp(math.log(r_all) + l0, math.log1p(-r_all) + l1)
    if r_rest == 1.0:
        lmix = l0
    else:
        lmix = np.logaddexp(math.log(r_rest) + l0, math.log1p(-r_rest) + l1)
    return l1, lmix, ly


def _densities(channel: QueryChannel, p: float, t: int, k: int, y: NDArray) -> tuple[NDArray, NDArray]:
    _check(p, t, k)
    l1, lmix, ly = _log_conditionals(channel, p, t, k, y)
    return l1 - ly, lmix - ly


def _quad(f, lo: float, hi: float, points: list[float], what: str) -> float:
    val, err, info = integrate.quad(f, lo, hi, points=points, epsabs=QUAD_EPSABS, limit=400, full_output=1)[:3]
    if not np.isfinite(val) or err > 1e-8:
        raise NumericalError(f"quadrature for {what} did not converge (estimate {val}, error {err})")
    return float(val)


@lru_cache(maxsize=65536)
def _stats_cached(channel: QueryChannel, p: float, t: int, k: int) -> ChannelStats:
    q1 = 1.0 - (1.0 - p) ** t
    if channel.is_bsc:
        y = np.array([0.0, 1.0])
        l1, lmix, ly = _log_conditionals(channel, p, t, k, y)
        probs = np.concatenate([q1 * np.exp(l1), (1.0 - q1) * np.exp(lmix)])
        vals = np.concatenate([l1 - ly, lmix - ly])
        C = float(probs @ vals)
        dev = vals - C
        return ChannelStats(C, float(probs @ dev**2), float(probs @ np.abs(dev) ** 3))

    se = float(channel.noise_level(p))
    lo, hi = -10.0 * se, 1.0 + 10.0 * se

    def moment(fn, what):
        def integrand(yv: float) -> float:
            l1, lmix, ly = _log_conditionals(channel, p, t, k, np.array([yv]))
            a, b = float(l1[0] - ly[0]), float(lmix[0] - ly[0])
            return q1 * math.exp(l1[0]) * fn(a) + (1.0 - q1) * math.exp(lmix[0]) * fn(b)

        return _quad(integrand, lo, hi, [0.0, 1.0], what)

    C = moment(lambda x: x, "mean")
    V = moment(lambda x: (x - C) ** 2, "variance")
    T = moment(lambda x: abs(x - C) ** 3, "third absolute moment")
    return ChannelStats(C, max(V, 0.0), max(T, 0.0))


def stats(channel: QueryChannel, p: float, t: int, k: int) -> ChannelStats:
    """Mean ``C``, variance ``V`` and third absolute central moment ``T`` of ``iota_t``."""
    _check(p, t, k)
    return _stats_cached(channel, float(p), int(t), int(k))


def sample_density(
    channel: QueryChannel, p: float, t: int, k: int, size: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Draw ``iota_t`` from the joint law of ``(X_[k], Y)`` by direct simulation."""
    _check(p, t, k)
    x = rng.random((size, k)) < p
    or_t = x[:, :t].any(axis=1)
    z = x.any(axis=1).astype(np.int8)
    y = transmit(channel, z, p, rng)
    a, b = _densities(channel, p, t, k, np.asarray(y, dtype=float))
    return np.where(or_t, a, b)


def _grid(resolution: int) -> NDArray:
    return (np.arange(resolution) + 0.5) / resolution


def _maximize(channel: QueryChannel, k: int, resolution: int) -> list[tuple[float, float]]:
    """Refined local maxima of ``C(p,k)`` as ``(C, p)`` pairs, best first."""
    ps = _grid(resolution)
    cs = np.array([stats(channel, float(p), k, k).C for p in ps])
    top = cs.max()
    cand = [
        i for i in range(resolution)
        if (i == 0 or cs[i] >= cs[i - 1]) and (i == resolution - 1 or cs[i] >= cs[i + 1])
        and cs[i] >= top - 1e-3 * max(abs(top), 1e-12)
    ]
    out = []
    for i in cand:
        lo = ps[i - 1] if i > 0 else 1e-9
        hi = ps[i + 1] if i < resolution - 1 else 1.0 - 1e-9
        res = optimize.minimize_scalar(
            lambda p: -stats(channel, float(p), k, k).C,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-7},
        )
        out.append((-float(res.fun), float(res.x)))
    out.sort(key=lambda cp: (-cp[0], cp[1]))
    merged: list[tuple[float, float]] = []
    for c, p in out:  # neighbouring grid peaks can refine to the same point
        if all(abs(p - q) > 1e-5 for _, q in merged):
            merged.append((c, p))
    return merged


def capacity(channel: QueryChannel, k: int, p_grid_resolution: int = 64) -> tuple[float, float]:
    """``(C(k), p*)``: the largest mean density over Bernoulli parameters."""
    if k < 1:
        raise DomainError("k must be positive")
    best = _maximize(channel, k, p_grid_resolution)[0]
    return best


def maximizers(channel: QueryChannel, k: int, p_grid_resolution: int = 64) -> list[float]:
    found = _maximize(channel, k, p_grid_resolution)
    top = found[0][0]
    return [p for c, p in found if c >= top - TIE_TOL * max(abs(top), 1e-300)]


def dispersion(channel: QueryChannel, k: int, epsilon: float, p_grid_resolution: int = 64) -> float:
    """Variance at the capacity-achieving inputs; min for eps <= 0.5, max otherwise."""
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    vs = [stats(channel, p, k, k).V for p in maximizers(channel, k, p_grid_resolution)]
    return min(vs) if epsilon <= 0.5 else max(vs)


def stats_table(channel: QueryChannel, ps: ArrayLike, k: int) -> list[tuple[float, int, ChannelStats]]:
    return [(float(p), t, stats(channel, float(p), t, k)) for p in np.atleast_1d(ps) for t in range(1, k + 1)]
