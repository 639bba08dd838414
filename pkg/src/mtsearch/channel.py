"""Query-dependent binary-input channels.

The noise level of a query depends on the Lebesgue size ``a`` of the queried
region through an affine size function ``h(a) = h0 + h1 * a``. For the BSC
``h`` is the crossover probability; for the AWGN channel the noise standard
deviation is ``h(a) * sigma``. All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigurationError, DomainError

BSC = "BSC"
AWGN = "AWGN"
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SizeFunction:
    h0: float
    h1: float = 0.0

    def __call__(self, a: ArrayLike) -> NDArray[np.float64] | float:
        out = self.h0 + self.h1 * np.asarray(a, dtype=float)
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        return abs(self.h1)

    def extremes(self) -> tuple[float, float]:
        ends = (self.h0, self.h0 + self.h1)
        return min(ends), max(ends)


@dataclass(frozen=True)
class QueryChannel:
    kind: str
    size_fn: SizeFunction
    sigma: float = 1.0

    def __post_init__(self) -> None:
        kind = str(self.kind).upper()
        object.__setattr__(self, "kind", kind)
        lo, hi = self.size_fn.extremes()
        if kind == BSC:
            if not (lo > 0.0 and hi < 0.5):
                raise ConfigurationError(
                    f"BSC crossover h(a) must lie in (0, 0.5) on [0,1]; got range [{lo}, {hi}]"
                )
        elif kind == AWGN:
            if lo <= 0.0:
                raise ConfigurationError(f"size function must be positive on [0,1]; min is {lo}")
            if not self.sigma > 0.0:
                raise ConfigurationError(f"AWGN sigma must be positive; got {self.sigma}")
        else:
            raise ConfigurationError(f"unknown channel kind {self.kind!r}")

    @classmethod
    def bsc(cls, h0: float, h1: float = 0.0) -> "QueryChannel":
        return cls(BSC, SizeFunction(h0, h1))

    @classmethod
    def awgn(cls, sigma: float, h0: float, h1: float = 0.0) -> "QueryChannel":
        return cls(AWGN, SizeFunction(h0, h1), sigma)

    @property
    def is_bsc(self) -> bool:
        return self.kind == BSC

    def noise_level(self, query_size: ArrayLike) -> NDArray[np.float64]:
        """Crossover (BSC) or noise std (AWGN) for each query size."""
        a = _check_size(query_size)
        h = self.h_of(a)
        return h if self.is_bsc else h * self.sigma

    def h_of(self, a: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(self.size_fn(a), dtype=float)


def _check_size(query_size: ArrayLike) -> NDArray[np.float64]:
    a = np.asarray(query_size, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise ConfigurationError("query size must lie in [0, 1]")
    return a


def transmit(
    ch: QueryChannel,
    z: ArrayLike,
    query_size: ArrayLike,
    rng: np.random.Generator,
) -> NDArray:
    """Pass binary symbols ``z`` through the channel; vectorized over ``z``."""
    zz = np.asarray(z)
    if np.any((zz != 0) & (zz != 1)):
        raise DomainError("channel input must be binary")
    level = np.broadcast_to(ch.noise_level(query_size), zz.shape)
    if ch.is_bsc:
        flips = rng.random(zz.shape) < level
        return np.asarray(zz ^ flips, dtype=np.int8)
    return zz.astype(float) + level * rng.standard_normal(zz.shape)


def log_likelihood(
    ch: QueryChannel,
    z: ArrayLike,
    y: ArrayLike,
    query_size: ArrayLike,
) -> NDArray[np.float64] | float:
    """``log P(y | z)`` at the noise level of ``query_size``."""
    zz = np.asarray(z, dtype=float)
    yy = np.asarray(y, dtype=float)
    level = ch.noise_level(query_size)
    if ch.is_bsc:
        out = np.where(yy == zz, np.log1p(-level), np.log(level))
    else:
        r = (yy - zz) / level
        out = -0.5 * r * r - np.log(level) - _LOG_SQRT_2PI
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def continuity_constant(ch: QueryChannel, q: float, xi_grid: Sequence[float]) -> float:
    """Grid estimate of the per-unit log-likelihood sensitivity ``c(q)`` of a BSC.

    For each ``xi`` the largest absolute change of ``log P(y|z)`` when the
    crossover moves from ``q`` to ``q +/- xi`` is divided by ``xi``; the
    maximum over the grid is returned.
    """
    if not ch.is_bsc:
        raise DomainError("continuity constant is only defined for the BSC")
    if not 0.0 < q < 1.0:
        raise DomainError("q must lie in (0, 1)")
    xi = np.asarray(list(xi_grid), dtype=float)
    if xi.size == 0 or np.any(xi <= 0.0) or np.any(xi >= min(q, 1.0 - q)):
        raise DomainError("each xi must lie in (0, min(q, 1-q))")
    base = np.log([q, 1.0 - q])
    worst = np.zeros_like(xi)
    for sign in (1.0, -1.0):
        qq = q + sign * xi
        moved = np.log(np.stack([qq, 1.0 - qq], axis=1))
        worst = np.maximum(worst, np.max(np.abs(moved - base), axis=1))
    return float(np.max(worst / xi))
