from __future__ import annotations

import math

import numpy as np
import pytest

from mtsearch import trajectory as tr
from mtsearch.channel import QueryChannel
from mtsearch.codebook import codewords, generate, oracle_responses
from mtsearch.decoder import (
    DecodeConfig,
    decode_multi_threshold_baseline,
    decode_piecewise,
    decode_single_threshold,
    default_gamma,
    default_lambdas,
    score_set,
)
from mtsearch.errors import DomainError
from mtsearch.infodensity import build_tables, stats
from mtsearch.trajectory import TargetState

from .oracles import all_subset_scores, brute_force_first_acceptor

Q = 0.1


def instance(seed, n=8, M=2, k=2, v_plus=0.05, p=0.3):
    rng = np.random.default_rng(seed)
    g = tr.enumerate_trajectories(n, M, 1, v_plus)
    cb = generate(n, g.columns, p, rng)
    idx = rng.choice(len(g), k, replace=False)
    _, y, _ = oracle_responses(cb, g.flats[idx], QueryChannel.bsc(Q), rng)
    return g, cb, y, idx


def gap_gamma(scores, frac):
    sv = np.unique(np.round(list(scores.values()), 9))
    j = int(frac * (len(sv) - 1))
    return float(sv[j] + sv[min(j + 1, len(sv) - 1)]) / 2 if len(sv) > 1 else float(sv[0]) - 1


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("frac", [0.5, 0.95])
def test_single_threshold_matches_exhaustive_search(seed, frac):
    g, cb, y, _ = instance(seed, n=6, M=2, k=2, v_plus=0.0 if seed % 2 else 0.05)
    scores = all_subset_scores(cb.dense(), g.flats, y, Q, 0.3, 2)
    gamma = gap_gamma(scores, frac)
    res = decode_single_threshold(g, cb, y, DecodeConfig(QueryChannel.bsc(Q), 0.3, 2, gamma))
    combo, score = brute_force_first_acceptor(cb.dense(), g.flats, y, Q, 0.3, 2, gamma)
    assert res.accepted == (combo is not None)
    if combo is not None:
        assert res.indices == combo
        assert res.score == pytest.approx(score, abs=1e-9)


def test_score_set_matches_oracle():
    g, cb, y, idx = instance(1)
    scores = all_subset_scores(cb.dense(), g.flats, y, Q, 0.3, 2)
    tabs = build_tables(QueryChannel.bsc(Q), 0.3, 2)
    key = tuple(sorted(int(i) for i in idx))
    assert score_set(tabs, codewords(cb, g.flats[list(key)]), y) == pytest.approx(scores[key])


def test_full_scan_collects_every_acceptor():
    g, cb, y, _ = instance(2, n=6)
    scores = all_subset_scores(cb.dense(), g.flats, y, Q, 0.3, 2)
    gamma = gap_gamma(scores, 0.7)
    cfg = DecodeConfig(QueryChannel.bsc(Q), 0.3, 2, gamma, full_scan=True, max_acceptors=len(scores))
    res = decode_single_threshold(g, cb, y, cfg)
    assert res.acceptors == sorted(c for c, s in scores.items() if s >= gamma)


def test_rejection_returns_fallback():
    g, cb, y, _ = instance(3)
    res = decode_single_threshold(g, cb, y, DecodeConfig(QueryChannel.bsc(Q), 0.3, 2, math.inf))
    assert not res.accepted and res.visited == math.comb(len(g), 2)
    assert all(np.array_equal(e.s, [0.5]) and np.array_equal(e.v, [0.0]) for e in res.estimates)


def test_known_velocity_fallback_keeps_velocity():
    g = tr.enumerate_trajectories(6, 4, 1, 0.1, tr.KNOWN_VELOCITY, known=[0.03])
    cb = generate(6, g.columns, 0.3, 0)
    y = np.zeros(6, dtype=np.int8)
    cfg = DecodeConfig(QueryChannel.bsc(Q), 0.3, 1, math.inf, mode=tr.KNOWN_VELOCITY)
    res = decode_single_threshold(g, cb, y, cfg, known=[TargetState([0.9], [0.03])])
    assert np.array_equal(res.estimates[0].v, [0.03])


@pytest.mark.parametrize("seed", range(4))
def test_multi_threshold_with_vacuous_subset_constraints_equals_single(seed):
    g, cb, y, _ = instance(seed, n=7, k=3, v_plus=0.0, M=2)
    ch = QueryChannel.bsc(Q)
    scores = all_subset_scores(cb.dense(), g.flats, y, Q, 0.3, 3)
    cfg = DecodeConfig(ch, 0.3, 3, gap_gamma(scores, 0.8))
    a = decode_single_threshold(g, cb, y, cfg)
    b = decode_multi_threshold_baseline(g, cb, y, cfg, lambdas={1: 1e6, 2: 1e6})
    assert (a.accepted, a.indices) == (b.accepted, b.indices)


def test_multi_threshold_is_stricter():
    ch = QueryChannel.bsc(Q)
    for seed in range(5):
        g, cb, y, _ = instance(seed, n=6, k=2)
        scores = all_subset_scores(cb.dense(), g.flats, y, Q, 0.3, 2)
        cfg = DecodeConfig(ch, 0.3, 2, gap_gamma(scores, 0.6), full_scan=True, max_acceptors=len(scores))
        a = decode_single_threshold(g, cb, y, cfg)
        b = decode_multi_threshold_baseline(g, cb, y, cfg)
        assert set(b.acceptors) <= set(a.acceptors)


def test_k1_decoders_coincide():
    g, cb, y, _ = instance(4, k=1)
    cfg = DecodeConfig(QueryChannel.bsc(Q), 0.3, 1, 2.0)
    a = decode_single_threshold(g, cb, y, cfg)
    b = decode_multi_threshold_baseline(g, cb, y, cfg)
    assert (a.accepted, a.indices) == (b.accepted, b.indices)


def test_product_mode_skips_identical_trajectories():
    s = [0.31, 0.33]
    grids = [tr.enumerate_trajectories(5, 2, 1, 0.1, tr.KNOWN_INITIAL, known=[x]) for x in s]
    cb = generate(5, grids[0].columns, 0.4, 1)
    y = np.ones(5, dtype=np.int8)
    cfg = DecodeConfig(QueryChannel.bsc(Q), 0.4, 2, -1e9, mode=tr.KNOWN_INITIAL, full_scan=True)
    res = decode_single_threshold(grids, cb, y, cfg, known=[TargetState([x], [0.0]) for x in s])
    for i, j in res.acceptors:
        assert not np.array_equal(grids[0].flats[i], grids[1].flats[j])
    shared = {tuple(f) for f in grids[0].flats} & {tuple(f) for f in grids[1].flats}
    assert len(res.acceptors) == len(grids[0]) * len(grids[1]) - len(shared)


def test_piecewise_decodes_each_slot():
    ch = QueryChannel.bsc(1e-9)
    lengths = [6, 5]
    M = 2
    truth = TargetState([0.41], [0.02])
    g0 = tr.enumerate_trajectories(lengths[0], M, 1, 0.05)
    rng = np.random.default_rng(0)
    cbs, ys = [], []
    start = truth
    for L in lengths:
        flats = tr.states_flats([start], L, (L * M,))
        cb = generate(L, L * M, 0.5, rng)
        _, y, _ = oracle_responses(cb, flats, ch, rng)
        cbs.append(cb)
        ys.append(y)
        start = TargetState(tr.locate(start, L), start.v)
    cfg = DecodeConfig(ch, 0.5, 1, 0.0)
    outs = decode_piecewise(g0, cbs, ys, cfg, lengths, M, 0.05, gammas=[3.0, 3.0])
    assert len(outs) == 2 and all(o.accepted for o in outs)
    assert np.allclose(outs[1].estimates[0].s, tr.locate(outs[0].estimates[0], lengths[0]))


def test_default_gamma_formulas():
    assert default_gamma(10, 4, 2, 1, 0.1) == pytest.approx(2 * math.log(10**4 * 16) + 1.0)
    assert default_gamma(10, 4, 2, 1, 0.1, tr.KNOWN_INITIAL) == pytest.approx(2 * math.log(10**3 * 4) + 1.0)
    assert default_gamma(10, 4, 2, 1, 0.1, tr.KNOWN_VELOCITY) == pytest.approx(2 * math.log(4) + 0.5 * math.log(10))


def test_default_lambdas_sit_between_subset_means():
    ch = QueryChannel.bsc(0.1, 0.2)
    lam = default_lambdas(ch, 0.3, 3)
    for t, v in lam.items():
        assert 0 < v < stats(ch, 0.3, 3, 3).C - stats(ch, 0.3, t, 3).C


def test_config_validation():
    with pytest.raises(DomainError):
        DecodeConfig(QueryChannel.bsc(Q), 0.3, 0, 1.0)
    with pytest.raises(DomainError):
        DecodeConfig(QueryChannel.bsc(Q), 0.3, 1, float("nan"))


@pytest.mark.parametrize("seed", range(3))
def test_raising_threshold_never_creates_acceptance(seed):
    g, cb, y, _ = instance(seed, n=7, k=2)
    ch = QueryChannel.bsc(Q)
    prev = True
    for gamma in np.linspace(-2.0, 8.0, 11):
        acc = decode_single_threshold(g, cb, y, DecodeConfig(ch, 0.3, 2, float(gamma))).accepted
        assert prev or not acc
        prev = acc
