from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtsearch import trajectory as tr
from mtsearch.errors import DomainError, ResourceError, SchemaError
from mtsearch.trajectory import TargetState


def sampled_set(n, cells, v_plus, motion=tr.REFLECT, samples=400_000, seed=0, s=None, v=None):
    """Quantized trajectories hit by dense random sampling of (s, v)."""
    rng = np.random.default_rng(seed)
    ss = rng.random(samples) if s is None else np.full(samples, s)
    vv = rng.uniform(-v_plus, v_plus, samples) if v is None else np.full(samples, v)
    i = np.arange(1, n + 1)
    rows = tr.quantize(tr.fold(ss[:, None] + vv[:, None] * i[None, :], motion), cells)
    return {tuple(r) for r in np.unique(rows, axis=0)}


@given(st.floats(-50, 50), st.sampled_from([tr.REFLECT, tr.WRAP]))
def test_fold_lands_in_unit_interval(u, motion):
    x = float(tr.fold(u, motion))
    assert 0.0 <= x <= 1.0


def test_reflect_examples():
    assert tr.fold(1.25) == pytest.approx(0.75)
    assert tr.fold(-0.25) == pytest.approx(0.25)
    assert tr.fold(2.5) == pytest.approx(0.5)
    assert tr.fold(1.25, tr.WRAP) == pytest.approx(0.25)


def test_quantize_boundaries():
    assert tr.quantize_location(0.0, 4, 2) == 1
    assert tr.quantize_location(1.0, 4, 2) == 8
    assert tr.quantize_location(0.125, 4, 2) == 1
    assert tr.quantize_location(0.1250001, 4, 2) == 2
    with pytest.raises(DomainError):
        tr.quantize_location(1.5, 4, 2)


@given(st.lists(st.integers(1, 7), min_size=1, max_size=4))
def test_flatten_roundtrip(cells):
    d = len(cells)
    f = tr.flatten(np.array(cells), 7)
    assert 1 <= f <= 7**d
    assert np.array_equal(tr.unflatten(f, 7, d), cells)


def test_flatten_mixed_radix_and_range():
    assert tr.flatten([2, 3], (4, 3)) == (2 - 1) * 3 + 3
    with pytest.raises(DomainError):
        tr.flatten([5, 1], 4)


@pytest.mark.parametrize(
    "n,M,v_plus,motion",
    [(3, 4, 0.1, tr.REFLECT), (5, 2, 0.1, tr.REFLECT), (4, 3, 0.3, tr.WRAP), (6, 2, 0.05, tr.REFLECT)],
)
def test_free_enumeration_matches_dense_sampling(n, M, v_plus, motion):
    grid = tr.enumerate_trajectories(n, M, 1, v_plus, motion=motion)
    got = {tuple(r) for r in grid.flats}
    assert len(got) == len(grid)
    assert got == sampled_set(n, n * M, v_plus, motion)


def test_known_modes_match_sampling():
    g = tr.enumerate_trajectories(5, 3, 1, 0.1, tr.KNOWN_INITIAL, known=[0.37])
    assert {tuple(r) for r in g.flats} == sampled_set(5, 15, 0.1, s=0.37)
    g = tr.enumerate_trajectories(5, 3, 1, 0.1, tr.KNOWN_VELOCITY, known=[0.07])
    assert {tuple(r) for r in g.flats} == sampled_set(5, 3, 0.1, v=0.07)


def test_static_counts():
    assert len(tr.enumerate_trajectories(2, 2, 1, 0.0)) == 4
    assert len(tr.enumerate_trajectories(3, 3, 2, 0.0)) == 81
    assert len(tr.enumerate_trajectories(5, 4, 2, 0.0, tr.KNOWN_VELOCITY, known=[0.0, 0.0])) == 16


@pytest.mark.parametrize("n,M,v_plus", [(3, 2, 0.1), (4, 2, 0.2), (3, 3, 0.05)])
def test_count_within_bound_and_representatives_requantize(n, M, v_plus):
    g = tr.enumerate_trajectories(n, M, 1, v_plus)
    assert len(g) <= tr.trajectory_bound(n, M, 1, v_plus)
    for idx in range(len(g)):
        q = tr.quantized_trajectory(g.state(idx), n, g.radices, g.motion)
        assert np.array_equal(q.flat, g.flats[idx])
        assert abs(g.reps_v[idx, 0]) <= v_plus


def test_grid_rows_are_sorted_and_indexable():
    g = tr.enumerate_trajectories(4, 2, 1, 0.1)
    rows = [tuple(r) for r in g.flats]
    assert rows == sorted(rows)
    assert g.index_of(g.flats[3]) == 3
    assert g.index_of(np.zeros(4)) == -1


def test_two_dimensional_grid_is_product():
    g1 = tr.enumerate_trajectories(3, 2, 1, 0.1)
    g2 = tr.enumerate_trajectories(3, 2, 2, 0.1)
    assert len(g2) == len(g1) ** 2
    st = g2.state(len(g2) - 1)
    assert np.array_equal(tr.quantized_trajectory(st, 3, g2.radices).flat, g2.flats[-1])


def test_cap_enforced():
    with pytest.raises(ResourceError):
        tr.enumerate_trajectories(10, 4, 2, 0.05, cap=1000)


def test_mode_validation():
    with pytest.raises(DomainError):
        tr.enumerate_trajectories(3, 2, 1, 0.1, tr.KNOWN_INITIAL)
    with pytest.raises(DomainError):
        tr.enumerate_trajectories(3, 2, 1, -0.1)


def test_cache_roundtrip(tmp_path):
    g = tr.enumerate_trajectories(4, 2, 2, 0.05, motion=tr.WRAP)
    p = tmp_path / "g.bin"
    tr.save_grid(g, p)
    h = tr.load_grid(p)
    assert (h.n, h.M, h.d, h.v_plus, h.mode, h.motion, h.radices) == (g.n, g.M, g.d, g.v_plus, g.mode, g.motion, g.radices)
    assert np.array_equal(h.flats, g.flats) and np.array_equal(h.reps_s, g.reps_s)
    p.write_bytes(b"garbage!" + p.read_bytes()[8:])
    with pytest.raises(SchemaError):
        tr.load_grid(p)


def test_excess_event():
    a = TargetState([0.2], [0.01])
    b = TargetState([0.25], [0.01])
    assert tr.excess_error(a, b, 10) == pytest.approx(0.05)
    assert not tr.excess_event([a], [b], 10, 0.1)
    assert tr.excess_event([a], [b], 10, 0.01)
    far = TargetState([0.9], [0.0])
    assert not tr.excess_event([a, far], [far, b], 10, 0.1)
    with pytest.raises(DomainError):
        tr.excess_event([a], [a, b], 10, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(-0.2, 0.2), st.integers(1, 8), st.integers(1, 4))
def test_true_state_is_enumerated(s, v, n, M):
    g = tr.enumerate_trajectories(n, M, 1, 0.2, tr.KNOWN_INITIAL, known=[s])
    q = tr.quantized_trajectory(TargetState([s], [v]), n, g.radices)
    assert g.index_of(q.flat) >= 0
