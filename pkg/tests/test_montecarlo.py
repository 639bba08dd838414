from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mtsearch import montecarlo as mc
from mtsearch import trajectory as tr
from mtsearch.channel import QueryChannel
from mtsearch.errors import DomainError

NOISELESS = QueryChannel.bsc(1e-9)
DESK = QueryChannel.bsc(0.1)


def score_interval(x, n, z=1.959963984540054):
    """Endpoints where the score statistic equals ``z`` (root-finding oracle)."""
    ph = x / n
    f = lambda p: (ph - p) ** 2 - z * z * p * (1 - p) / n  # noqa: E731
    lo = 0.0 if x == 0 else brentq(f, 1e-15, ph * (1 - 1e-12), xtol=1e-14)
    hi = 1.0 if x == n else brentq(f, ph + (1 - ph) * 1e-12, 1 - 1e-15, xtol=1e-14)
    return lo, hi


@settings(max_examples=60)
@given(st.integers(1, 500).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_interval_matches_score_inversion(xn):
    x, n = xn
    lo, hi = mc.wilson_interval(x, n)
    rlo, rhi = score_interval(x, n)
    assert lo == pytest.approx(rlo, abs=1e-9)
    assert hi == pytest.approx(rhi, abs=1e-9)


def test_wilson_known_value():
    lo, hi = mc.wilson_interval(5, 20)
    assert (lo, hi) == pytest.approx((0.1118, 0.4687), abs=1e-4)


def test_spec_validation():
    with pytest.raises(DomainError):
        mc.ExperimentSpec(DESK, n=10, trials=0)
    with pytest.raises(DomainError):
        mc.ExperimentSpec(DESK, n=10, mode="piecewise", slots=(4, 8))
    with pytest.raises(DomainError):
        mc.ExperimentSpec(DESK, n=10, gamma_rule="magic")


def test_resolve_records_mode_resolution():
    free = mc.resolve(mc.ExperimentSpec(DESK, n=10, k=1, M=4))
    kv = mc.resolve(mc.ExperimentSpec(DESK, n=10, k=1, M=4, mode=tr.KNOWN_VELOCITY))
    pw = mc.resolve(mc.ExperimentSpec(DESK, n=10, k=1, M=4, mode=mc.PIECEWISE, slots=(5, 10)))
    assert (free.delta, kv.delta, pw.delta) == (0.5, 0.25, 0.75)
    assert len(pw.gammas) == 2
    assert free.p == pytest.approx(0.5, abs=1e-4)


def test_trial_streams_are_independent_of_order():
    a = [g.random() for g in mc.trial_streams(7, 3)]
    _ = mc.trial_streams(7, 2)
    b = [g.random() for g in mc.trial_streams(7, 3)]
    assert a == b and len(set(a)) == 3


def test_noiseless_generous_threshold_has_no_excess():
    spec = mc.ExperimentSpec(NOISELESS, n=12, k=2, v_plus=0.0, M=4, gamma=5.0, trials=20, seed=1)
    _, summary, recs = mc.run_trials(spec)
    assert summary.excess_count == 0 and summary.acceptance_rate == 1.0
    assert all(r.error <= 0.5 for r in recs)


def test_infinite_threshold_falls_back():
    spec = mc.ExperimentSpec(DESK, n=12, k=1, v_plus=0.0, M=32, gamma=math.inf, trials=40, seed=2)
    _, summary, _ = mc.run_trials(spec)
    assert summary.acceptance_rate == 0.0
    assert summary.excess_probability > 0.75


@pytest.mark.parametrize("mode", [tr.FREE, tr.KNOWN_VELOCITY, tr.KNOWN_INITIAL, mc.PIECEWISE])
def test_same_seed_same_records_any_worker_count(mode):
    kw = dict(slots=(6, 10)) if mode == mc.PIECEWISE else {}
    spec = mc.ExperimentSpec(DESK, n=10, k=2, v_plus=0.05, M=2, trials=6, seed=11, mode=mode, **kw)
    _, s1, r1 = mc.run_trials(spec, workers=1)
    _, s2, r2 = mc.run_trials(spec, workers=2)
    strip = lambda rs: [replace(r, decode_time=0.0) for r in rs]  # noqa: E731
    assert strip(r1) == strip(r2)
    assert (s1.excess_count, s1.acceptance_rate) == (s2.excess_count, s2.acceptance_rate)


def test_targets_are_resampled_until_distinct():
    spec = mc.ExperimentSpec(DESK, n=4, k=3, M=1, v_plus=0.0, trials=10, seed=0)
    _, summary, recs = mc.run_trials(spec)
    assert summary.resamples > 0
    for r in recs:
        flats = {tuple(tr.states_flats([tr.TargetState(s, v)], 4, (4,))[0]) for s, v in zip(r.true_s, r.true_v)}
        assert len(flats) == 3


def test_fixed_codebook_mode_reuses_columns():
    spec = mc.ExperimentSpec(DESK, n=8, k=1, M=2, trials=2, seed=4, fresh_codebook=False)
    res = mc.resolve(spec)
    a = mc._codebook(spec, 8, 16, res.p, np.random.default_rng(0), 0)
    b = mc._codebook(spec, 8, 16, res.p, np.random.default_rng(1), 0)
    assert np.array_equal(a.dense(), b.dense())


def test_resolution_curve_small():
    spec = mc.ExperimentSpec(NOISELESS, n=8, k=1, v_plus=0.0, trials=15, seed=3, gamma=3.0, epsilon=0.2)
    pts = mc.resolution_curve(spec, [8, 12], m_max=8)
    assert [p.n for p in pts] == [8, 12]
    for p in pts:
        assert 1 <= p.M <= 8
        assert p.empirical_nats == pytest.approx(math.log(p.M / 2))
        assert p.excess_probability <= 0.2
        assert p.converse_nats >= p.achievable_nats


def test_bench_k1_decoders_agree():
    base = mc.ExperimentSpec(DESK, n=20, k=1, v_plus=0.0, M=4, trials=8, seed=0, mode=tr.KNOWN_VELOCITY)
    rows = mc.runtime_bench(base, grid=[(1, 20)])
    assert len(rows) == 1 and rows[0].agreement == 1.0
    assert rows[0].single_mean > 0 and rows[0].multi_mean > 0
