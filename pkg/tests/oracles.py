"""Independent reference implementations used as test oracles.

Nothing here imports the density or decoding code under test: densities are
written out from the channel law directly and searches are plain loops.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def bsc_density(q: float, p: float, t: int, k: int) -> dict[tuple[int, int], float]:
    """Per-symbol density ``iota_t`` for a BSC with fixed crossover ``q``, keyed by (subset OR, y)."""
    pi = 1 - (1 - p) ** k
    r = (1 - p) ** (k - t)
    py1 = pi * (1 - q) + (1 - pi) * q
    py = {0: 1 - py1, 1: py1}
    like1 = {0: q, 1: 1 - q}
    out = {}
    for y in (0, 1):
        out[(1, y)] = math.log(like1[y] / py[y])
        out[(0, y)] = math.log((r * (1 - like1[y]) + (1 - r) * like1[y]) / py[y])
    return out


def bsc_atoms(q: float, p: float, t: int, k: int) -> list[tuple[float, float]]:
    """(value, probability) pairs of ``iota_t`` under the joint law."""
    dens = bsc_density(q, p, t, k)
    pi = 1 - (1 - p) ** k
    q1 = 1 - (1 - p) ** t
    r = (1 - p) ** (k - t)
    out = []
    for o in (0, 1):
        p_or = q1 if o else 1 - q1
        p_z1 = 1.0 if o else 1 - r  # probability the full OR is 1 given the subset OR
        for y in (0, 1):
            py_given = p_z1 * ((1 - q) if y else q) + (1 - p_z1) * (q if y else (1 - q))
            out.append((dens[(o, y)], p_or * py_given))
    assert abs(sum(w for _, w in out) - 1) < 1e-12 and pi > 0
    return out


def multinomial_lower_tail(atoms: list[tuple[float, float]], n: int, gamma: float) -> float:
    """``Pr{sum of n i.i.d. draws < gamma}`` by looping over all atom counts."""
    vals = [v for v, _ in atoms]
    probs = [w for _, w in atoms]
    m = len(atoms)
    total = 0.0
    for counts in _compositions(n, m):
        s = sum(c * v for c, v in zip(counts, vals))
        if s < gamma:
            coef = math.factorial(n)
            for c in counts:
                coef //= math.factorial(c)
            total += coef * math.prod(w**c for w, c in zip(probs, counts))
    return total


def _compositions(n: int, m: int):
    if m == 1:
        yield (n,)
        return
    for c in range(n + 1):
        for rest in _compositions(n - c, m - 1):
            yield (c,) + rest


def brute_force_first_acceptor(dense_bits, flats, y, q, p, k, gamma):
    """Exhaustive k-subset search in lexicographic order with a plain per-symbol loop."""
    dens = bsc_density(q, p, k, k)
    n = len(y)
    best = None
    for combo in itertools.combinations(range(len(flats)), k):
        score = 0.0
        for i in range(n):
            orb = max(int(dense_bits[i, flats[j][i] - 1]) for j in combo)
            score += dens[(orb, int(y[i]))]
        if score >= gamma:
            return combo, score
        if best is None:
            best = score
    return None, None


def all_subset_scores(dense_bits, flats, y, q, p, k):
    dens = bsc_density(q, p, k, k)
    bits = np.stack([dense_bits[np.arange(len(y)), np.asarray(f) - 1] for f in flats])
    yv = np.asarray(y, dtype=int)
    out = {}
    for combo in itertools.combinations(range(len(flats)), k):
        orb = bits[list(combo)].max(axis=0)
        out[combo] = float(sum(dens[(int(o), int(v))] for o, v in zip(orb, yv)))
    return out


def awgn_density_samples(sigma, h0, h1, p, t, k, size, rng):
    """Draw ``iota_t`` for the Gaussian channel ``y = z + sigma h(p) N(0,1)`` by direct simulation."""
    from scipy.stats import norm

    s = sigma * (h0 + h1 * p)
    x = rng.random((size, k)) < p
    z = x.any(axis=1).astype(float)
    y = z + s * rng.standard_normal(size)
    f1 = norm.pdf(y, loc=1.0, scale=s)
    f0 = norm.pdf(y, loc=0.0, scale=s)
    pi = 1 - (1 - p) ** k
    r = (1 - p) ** (k - t)
    py = pi * f1 + (1 - pi) * f0
    cond = np.where(x[:, :t].any(axis=1), f1, r * f0 + (1 - r) * f1)
    return np.log(cond) - np.log(py)


def bsc_density_samples(q, p, t, k, size, rng):
    x = rng.random((size, k)) < p
    z = x.any(axis=1)
    y = (z ^ (rng.random(size) < q)).astype(int)
    dens = bsc_density(q, p, t, k)
    table = np.array([[dens[(0, 0)], dens[(0, 1)]], [dens[(1, 0)], dens[(1, 1)]]])
    return table[x[:, :t].any(axis=1).astype(int), y]
