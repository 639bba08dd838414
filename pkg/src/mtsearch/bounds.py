"""Evaluators for the resolution bounds.

* non-asymptotic achievability for discrete (BSC) and Gaussian query channels,
* the non-asymptotic converse restricted to constant query sizes,
* second-order (normal) approximations for the general, known-velocity,
  known-initial-location and piecewise-velocity settings,
* a fixed-threshold classifier of the speed regime.

Every quantity is in nats. The second-order values are ``-log(delta)``
approximations with the O(1) / O(log n) remainders set to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import betaln, gammaln
from scipy.stats import norm

from .channel import QueryChannel, continuity_constant
from .errors import DomainError, ResourceError
from .infodensity import _log_conditionals, capacity, dispersion, sample_density, stats

GAUSSIAN = "gaussian_berry_esseen"
EXACT = "exact_discrete"
MONTE_CARLO = "monte_carlo"

EXACT_MAX_COMPOSITIONS = 8_000_000

WHICH = (
    "achievable_thm4",
    "converse_thm4",
    "known_velocity_thm5",
    "known_initial_thm6",
    "piecewise_thm7_ach",
    "piecewise_thm7_con",
)


@dataclass(frozen=True)
class TailModel:
    method: str = GAUSSIAN
    samples: int = 200_000
    seed: int = 0
    resolution: float = 1e-6

    def __post_init__(self) -> None:
        if self.method not in (GAUSSIAN, EXACT, MONTE_CARLO):
            raise DomainError(f"unknown tail model {self.method!r}")


# ---------------------------------------------------------------- H functions


def log_h1(a: float, b: float, gamma: float) -> float:
    if b < 0 or a < b:
        raise DomainError("H1 needs a >= b >= 0")
    # log binom(a, b) = -log(a + 1) - log B(a - b + 1, b + 1); stable when a >> b
    return float(-math.log1p(a) - betaln(a - b + 1.0, b + 1.0) - gamma)


def log_h2(a: float, b: float, gamma: float) -> float:
    if b < 0 or a < b:
        raise DomainError("H2 needs a >= b >= 0")
    if b == 0:
        return -gamma
    return float(b * math.log(a) - gamma)


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def h1(a: float, b: float, gamma: float) -> float:
    """``binom(a, b) * exp(-gamma)`` evaluated in log space."""
    return _exp(log_h1(a, b, gamma))


def h2(a: float, b: float, gamma: float) -> float:
    """``a**b * exp(-gamma)`` evaluated in log space."""
    return _exp(log_h2(a, b, gamma))


# ---------------------------------------------------------------- per-symbol atoms


def symbol_atoms(channel: QueryChannel, p: float, t: int, k: int) -> tuple[NDArray, NDArray]:
    """Values and probabilities of the per-symbol density ``iota_t`` (BSC only).

    Atoms are indexed by ``(or_t, y)``; atoms with equal values are merged.
    """
    if not channel.is_bsc:
        raise DomainError("exact per-symbol atoms exist only for the BSC")
    y = np.array([0.0, 1.0])
    l1, lmix, ly = _log_conditionals(channel, p, t, k, y)
    q1 = 1.0 - (1.0 - p) ** t
    vals = np.concatenate([l1 - ly, lmix - ly])
    probs = np.concatenate([q1 * np.exp(l1), (1.0 - q1) * np.exp(lmix)])
    keep = probs > 0
    vals, probs = vals[keep], probs[keep]
    key = np.round(vals, 12)
    uk, inv = np.unique(key, return_inverse=True)
    merged_v = np.array([vals[inv == j][0] for j in range(len(uk))])
    merged_p = np.bincount(inv, weights=probs)
    return merged_v, merged_p


def _compositions(n: int, m: int) -> Iterator[NDArray[np.int64]]:
    """All nonnegative integer m-vectors summing to n, in blocks."""
    if m == 1:
        yield np.array([[n]], dtype=np.int64)
        return
    for c0 in range(n + 1):
        for rest in _compositions_block(n - c0, m - 1):
            yield np.column_stack([np.full(len(rest), c0, dtype=np.int64), rest])


def _compositions_block(r: int, m: int) -> Iterator[NDArray[np.int64]]:
    if m == 1:
        yield np.array([[r]], dtype=np.int64)
    elif m == 2:
        c = np.arange(r + 1, dtype=np.int64)
        yield np.column_stack([c, r - c])
    elif m == 3:
        i, j = np.triu_indices(r + 1)
        # i + (j - i) + (r - j) = r
        yield np.column_stack([i, j - i, r - j]).astype(np.int64)
    else:
        yield from _compositions(r, m)


def _count_compositions(n: int, m: int) -> int:
    return math.comb(n + m - 1, m - 1)


def sum_distribution(vals: NDArray, probs: NDArray, n: int) -> Iterator[tuple[NDArray, NDArray]]:
    """Blocks of ``(sum, probability)`` pairs of the n-fold sum of a finite law."""
    m = len(vals)
    logp = np.log(probs)
    const = gammaln(n + 1.0)
    for comp in _compositions(n, m):
        lp = const - gammaln(comp + 1.0).sum(axis=1) + comp @ logp
        yield comp @ vals, np.exp(lp)


def _exact_tail(vals, probs, n, gamma, lower: bool) -> float:
    if _count_compositions(n, len(vals)) > 50 * EXACT_MAX_COMPOSITIONS:
        raise ResourceError("exact tail enumeration too large; use the Gaussian or Monte Carlo model")
    total = 0.0
    for s, pr in sum_distribution(vals, probs, n):
        total += float(pr[s < gamma].sum() if lower else pr[s > gamma].sum())
    return min(max(total, 0.0), 1.0)


def _mc_sums(channel, p, t, k, n, model: TailModel) -> NDArray:
    rng = np.random.default_rng(model.seed)
    if channel.is_bsc:
        vals, probs = symbol_atoms(channel, p, t, k)
        counts = rng.multinomial(n, probs / probs.sum(), size=model.samples)
        return counts @ vals
    out = np.empty(model.samples)
    batch = max(1, 2_000_000 // max(n, 1))
    for s0 in range(0, model.samples, batch):
        s1 = min(model.samples, s0 + batch)
        out[s0:s1] = sample_density(channel, p, t, k, (s1 - s0) * n, rng).reshape(s1 - s0, n).sum(axis=1)
    return out


def berry_esseen_slack(channel: QueryChannel, p: float, t: int, k: int, n: int) -> float:
    """``6 T / (sqrt(n) V**1.5)`` for the n-fold density sum."""
    st = stats(channel, p, t, k)
    if st.V <= 0:
        return math.inf
    return 6.0 * st.T / (math.sqrt(n) * st.V**1.5)


def _tail(channel, p, t, k, n, threshold, lower: bool, model: TailModel) -> float:
    if threshold == -math.inf:
        return 0.0 if lower else 1.0
    if threshold == math.inf:
        return 1.0 if lower else 0.0
    if model.method == GAUSSIAN:
        st = stats(channel, p, t, k)
        if st.V <= 0.0:
            mean = n * st.C
            return float(mean < threshold) if lower else float(mean > threshold)
        zval = (threshold - n * st.C) / math.sqrt(n * st.V)
        return float(norm.cdf(zval) if lower else norm.sf(zval))
    if model.method == EXACT:
        vals, probs = symbol_atoms(channel, p, t, k)
        return _exact_tail(vals, probs, n, threshold, lower)
    sums = _mc_sums(channel, p, t, k, n, model)
    return float(np.mean(sums < threshold) if lower else np.mean(sums > threshold))


def tail_g1(channel: QueryChannel, p: float, k: int, n: int, gamma: float, model: TailModel = TailModel()) -> float:
    """``Pr{ iota(X^n(1..k); Y^n) < gamma }`` under the joint input-output law."""
    return _tail(channel, p, k, k, n, gamma, True, model)


def tail_g2(
    channel: QueryChannel,
    p: float,
    k: int,
    j_size: int,
    n: int,
    lambda_j: float,
    model: TailModel = TailModel(),
) -> float:
    """``Pr{ iota(X_J^n; Y^n) > n C(p,|J|) + n lambda_J }``."""
    if not 1 <= j_size < k:
        raise DomainError("subset size must satisfy 1 <= |J| < k")
    if lambda_j < 0:
        raise DomainError("lambda_J must be nonnegative")
    thr = n * stats(channel, p, j_size, k).C + n * lambda_j
    return _tail(channel, p, j_size, k, n, thr, False, model)


# ---------------------------------------------------------------- achievability


@dataclass(frozen=True)
class BoundInputs:
    channel: QueryChannel
    n: int
    k: int
    d: int
    M: int
    p: float
    v_plus: float
    eta: float
    gamma: float
    lambdas: dict[int, float] | None = None
    model: TailModel = TailModel()
    xi_points: int = 32


@dataclass
class BoundBreakdown:
    total: float
    typicality: float
    multiplier: float
    g1: float
    h1_disjoint: float
    subset_terms: list[tuple[int, float, float]] = field(default_factory=list)
    output_truncation: float = 0.0


def awgn_xi(n: int, h: float, L: float, eta: float) -> float:
    """Change-of-measure exponent for the Gaussian channel."""
    le = L * eta
    d1 = h - le
    d2 = h * h - le * (2.0 * h + le)
    if d1 <= 0.0 or d2 <= 0.0:
        raise DomainError(
            "Gaussian change-of-measure exponent is undefined: h(p) - L*eta and "
            "h(p)^2 - L*eta*(2h(p) + L*eta) must be positive; reduce eta"
        )
    return n * le / d1 + n * le * (h * h + le * (2.0 * h + le)) * (2.0 * h + le) / (h * h * d2)


def trajectory_count(n: int, M: int, d: int, v_plus: float) -> float:
    return ((2.0 * n * v_plus + 3.0) * float(n) ** 4 * float(M) ** 2) ** d


def achievability_bound(inp: BoundInputs) -> BoundBreakdown:
    """Right-hand side of the achievability bound for the single-threshold procedure."""
    ch, n, k, d, M, p = inp.channel, inp.n, inp.k, inp.d, inp.M, inp.p
    if inp.eta <= 0:
        raise DomainError("eta must be positive")
    typ = 4.0 * n * math.exp(-2.0 * (float(n) ** d) * (float(M) ** d) * inp.eta**2)
    h = float(ch.h_of(p))
    L = ch.size_fn.lipschitz
    extra = 0.0
    if ch.is_bsc:
        if L == 0.0:
            mult = 1.0
        else:
            q = h
            top = min(L * inp.eta, 0.999 * min(q, 1.0 - q))
            grid = np.linspace(top / inp.xi_points, top, inp.xi_points)
            c = continuity_constant(ch, q, grid)
            mult = _exp(n * inp.eta * L * c)
    else:
        mult = _exp(awgn_xi(n, h, L, inp.eta))
        extra = math.exp(-n * (1.0 - math.log(2.0)) / 2.0)
    count = trajectory_count(n, M, d, inp.v_plus) - k
    g1 = tail_g1(ch, p, k, n, inp.gamma, inp.model)
    hd = h1(count, k, inp.gamma)
    lam = inp.lambdas
    if lam is None:
        ck = stats(ch, p, k, k).C
        lam = {t: 0.5 * (ck - stats(ch, p, t, k).C) for t in range(1, k)}
    inner = g1 + hd
    terms = []
    for j in range(1, k):
        g2 = tail_g2(ch, p, k, j, n, lam[j], inp.model)
        hj = h1(count, k - j, inp.gamma - n * stats(ch, p, j, k).C - n * lam[j])
        terms.append((j, g2, hj))
        inner += math.comb(k, j) * (g2 + hj)
    total = typ + extra + (mult * inner if inner > 0 else 0.0)
    return BoundBreakdown(total, typ, mult, g1, hd, terms, extra)


def optimize_lambdas(inp: BoundInputs, points: int = 16) -> dict[int, float]:
    """Coarse per-size minimization of the subset terms over ``lambda_t``.

    Each size-``t`` term depends on its own ``lambda_t`` only, so the search is
    separable; the grid spans ``(0, 1.5 (C(p,k) - C(p,t))]``.
    """
    ch, n, k = inp.channel, inp.n, inp.k
    count = trajectory_count(n, inp.M, inp.d, inp.v_plus) - k
    ck = stats(ch, inp.p, k, k).C
    out = {}
    for t in range(1, k):
        ct = stats(ch, inp.p, t, k).C
        span = max(ck - ct, 1e-12)
        best = None
        for f in np.linspace(1.5 / points, 1.5, points):
            lam = float(f * span)
            val = tail_g2(ch, inp.p, k, t, n, lam, inp.model) + h1(count, k - t, inp.gamma - n * ct - n * lam)
            if best is None or val < best[0]:
                best = (val, lam)
        out[t] = best[1]
    return out


# ---------------------------------------------------------------- converse


def converse_quantile(
    channel: QueryChannel, a: float, k: int, n: int, level: float, model: TailModel = TailModel()
) -> float:
    """``sup{ r : Pr{ sum_i iota_a(Z_i; Y_i) <= r } <= level }`` for constant query size ``a``."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    if model.method == GAUSSIAN:
        st = stats(channel, a, k, k)
        return n * st.C + math.sqrt(n * st.V) * float(norm.ppf(level))
    if model.method == EXACT:
        vals, probs = symbol_atoms(channel, a, k, k)
        if _count_compositions(n, len(vals)) > EXACT_MAX_COMPOSITIONS:
            raise ResourceError("exact quantile enumeration too large; use the Gaussian model")
        parts = list(sum_distribution(vals, probs, n))
        s = np.concatenate([x[0] for x in parts])
        pr = np.concatenate([x[1] for x in parts])
        order = np.argsort(s, kind="stable")
        s, pr = s[order], pr[order]
        cdf = np.cumsum(pr)
        above = np.nonzero(cdf > level + 1e-15)[0]
        return float(s[above[0]]) if above.size else float(s[-1])
    sums = np.sort(_mc_sums(channel, a, k, k, n, model))
    idx = int(math.floor(level * len(sums)))
    return float(sums[min(idx, len(sums) - 1)])


def converse_level(epsilon: float, k: int, d: int, v_plus: float, beta: float, kappa: float) -> float:
    return epsilon + 2.0 * (1.0 + 4.0 * v_plus) * k * k * d * beta + kappa


def converse_bound(
    channel: QueryChannel,
    k: int,
    d: int,
    n: int,
    epsilon: float,
    v_plus: float,
    beta: float | None = None,
    kappa: float | None = None,
    model: TailModel = TailModel(),
    a_points: int = 201,
) -> float:
    """Upper bound on ``-log(delta)`` optimized over constant query sizes."""
    beta = 1.0 / math.sqrt(n) if beta is None else beta
    kappa = 1.0 / math.sqrt(n) if kappa is None else kappa
    if v_plus <= 0:
        raise DomainError("the converse needs v_plus > 0")
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    if not 0.0 < beta < (1.0 - epsilon) / 2.0:
        raise DomainError("beta must lie in (0, (1 - epsilon)/2)")
    room = 1.0 - epsilon - 2.0 * (1.0 + 4.0 * v_plus) * k * k * d * beta
    if not 0.0 < kappa < room:
        raise DomainError(f"kappa must lie in (0, {room:.6g})")
    level = converse_level(epsilon, k, d, v_plus, beta, kappa)
    grid = (np.arange(a_points) + 0.5) / a_points
    best = max(converse_quantile(channel, float(a), k, n, level, model) for a in grid)
    return (best - d * k * math.log(2.0 * n * v_plus * beta * beta) - math.log(kappa)) / (2.0 * d * k)


# ---------------------------------------------------------------- second order


def _normal_term(n: float, C: float, V: float, eps: float) -> float:
    return n * C + math.sqrt(n * V) * float(norm.ppf(eps))


def second_order(
    channel: QueryChannel,
    n: int,
    k: int,
    d: int,
    epsilon: float,
    v_plus: float,
    which: str,
    slots: Sequence[int] | None = None,
    eps_split: Sequence[float] | None = None,
    split_search: int = 0,
) -> float:
    """Second-order approximation of ``-log(delta*)``.

    For the piecewise model ``slots`` holds the slot boundaries ``n_1 < ... < n_B``
    (``n`` is ignored). ``split_search > 0`` searches that many values of the
    first slot's share of ``epsilon`` instead of the uniform split.
    """
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    if which not in WHICH:
        raise DomainError(f"unknown approximation {which!r}")
    C = capacity(channel, k)[0]
    dk = d * k
    if which.startswith("piecewise"):
        if not slots:
            raise DomainError("piecewise approximations need slot boundaries")
        bounds_ = list(slots)
        lengths = [bounds_[0]] + [bounds_[j] - bounds_[j - 1] for j in range(1, len(bounds_))]
        if any(x < 1 for x in lengths):
            raise DomainError("slot boundaries must be strictly increasing")
        B = len(lengths)
        if which == "piecewise_thm7_con":
            nb = bounds_[-1]
            return _normal_term(nb, C, dispersion(channel, k, epsilon), epsilon) / ((B + 1) * dk)

        def value(split: Sequence[float]) -> float:
            parts = []
            for j, (N, e) in enumerate(zip(lengths, split)):
                base = _normal_term(N, C, dispersion(channel, k, e), e) - N * v_plus
                if j == 0:
                    parts.append((base - 4 * dk * math.log(N)) / 2.0)
                else:
                    parts.append(base - 3 * dk * math.log(N))
            return min(parts)

        if eps_split is not None:
            if len(eps_split) != B or sum(eps_split) > epsilon + 1e-12:
                raise DomainError("epsilon split must have one entry per slot and sum to at most epsilon")
            best = value(eps_split)
        else:
            best = value([epsilon / B] * B)
            if split_search > 0 and B > 1:
                for f in np.linspace(0.02, 0.98, split_search):
                    e1 = f * epsilon
                    rest = (epsilon - e1) / (B - 1)
                    best = max(best, value([e1] + [rest] * (B - 1)))
        return (best - dk * math.log(B + 1)) / dk

    V = dispersion(channel, k, epsilon)
    base = _normal_term(n, C, V, epsilon)
    if which == "achievable_thm4":
        return (base - 4 * dk * math.log(n) - n * v_plus) / (2 * dk)
    if which == "converse_thm4":
        return base / (2 * dk)
    if which == "known_velocity_thm5":
        return base / dk
    return (base - 3 * dk * math.log(n) - n * v_plus) / dk


def regime_classify(n: int, v_plus: float) -> str:
    """Speed regime of ``n * v_plus`` using the fixed thresholds 1 and sqrt(n)."""
    if n < 1:
        raise DomainError("n must be positive")
    nv = n * v_plus
    if nv >= math.sqrt(n) * (1 - 1e-12):
        return "first_order_only"
    if nv > 1.0:
        return "capacity_plus_dispersion_penalized"
    return "full_second_order"


# ---------------------------------------------------------------- design helpers


def design_log_m(
    channel: QueryChannel, n: int, k: int, d: int, v_plus: float, eps_prime: float, p: float | None = None,
    mode: str = "free",
) -> float:
    """``log M`` from the normal approximation at design error ``eps_prime``."""
    if p is None:
        p = capacity(channel, k)[1]
    st = stats(channel, p, k, k)
    base = _normal_term(n, st.C, st.V, eps_prime)
    dk = d * k
    if mode == "known_velocity":
        return (base - 0.5 * math.log(n)) / dk
    if mode == "known_initial":
        return (base - 3 * dk * math.log(n) - n * v_plus) / dk
    return (base - 4 * dk * math.log(n) - n * v_plus) / (2 * dk)


def design_M(channel: QueryChannel, n: int, k: int, d: int, v_plus: float, eps_prime: float,
             p: float | None = None, mode: str = "free") -> int:
    lm = design_log_m(channel, n, k, d, v_plus, eps_prime, p, mode)
    return max(1, int(math.floor(math.exp(min(lm, 40.0)))))


def dispersion_gamma(channel: QueryChannel, n: int, k: int, p: float, eps_prime: float) -> float:
    """Threshold ``n C(p,k) + sqrt(n V(p,k)) Phi^-1(eps')``."""
    st = stats(channel, p, k, k)
    return _normal_term(n, st.C, st.V, eps_prime)
