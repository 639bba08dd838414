from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mtsearch.channel import QueryChannel, SizeFunction, continuity_constant, log_likelihood, transmit
from mtsearch.errors import ConfigurationError, DomainError


def test_size_function_affine():
    h = SizeFunction(0.4, 1.0)
    assert h(0.25) == pytest.approx(0.65)
    assert h.lipschitz == 1.0
    assert h.extremes() == (0.4, 1.4)


@pytest.mark.parametrize(
    "build",
    [
        lambda: QueryChannel.bsc(0.0),
        lambda: QueryChannel.bsc(0.3, 0.3),
        lambda: QueryChannel.awgn(1.0, 0.0),
        lambda: QueryChannel.awgn(0.0, 0.5),
        lambda: QueryChannel("erasure", SizeFunction(0.1)),
    ],
)
def test_invalid_channels_rejected(build):
    with pytest.raises(ConfigurationError):
        build()


def test_bsc_flip_rate_follows_realized_size():
    ch = QueryChannel.bsc(0.05, 0.3)
    rng = np.random.default_rng(1)
    z = np.zeros(200_000, dtype=np.int8)
    for a in (0.0, 0.5, 1.0):
        y = transmit(ch, z, a, rng)
        assert y.dtype == np.int8
        q = 0.05 + 0.3 * a
        assert abs(y.mean() - q) < 4 * math.sqrt(q * (1 - q) / z.size)


def test_awgn_noise_scale():
    ch = QueryChannel.awgn(1.5, 0.4, 1.0)
    rng = np.random.default_rng(2)
    y = transmit(ch, np.ones(100_000, dtype=np.int8), 0.2, rng)
    assert y.mean() == pytest.approx(1.0, abs=0.02)
    assert y.std() == pytest.approx(1.5 * 0.6, rel=0.02)


def test_transmit_rejects_nonbinary():
    with pytest.raises(DomainError):
        transmit(QueryChannel.bsc(0.1), np.array([0, 2]), 0.5, np.random.default_rng(0))


def test_query_size_range_checked():
    with pytest.raises(ConfigurationError):
        QueryChannel.bsc(0.1).noise_level(1.5)


@given(st.floats(0.01, 0.45), st.integers(0, 1), st.floats(0.0, 1.0))
def test_bsc_likelihood_normalized(q, z, a):
    ch = QueryChannel.bsc(q * 0.5, q * 0.5)
    total = sum(math.exp(log_likelihood(ch, z, y, a)) for y in (0, 1))
    assert total == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 2.0), st.integers(0, 1), st.floats(0.0, 1.0))
def test_awgn_likelihood_integrates_to_one(sigma, z, a):
    ch = QueryChannel.awgn(sigma, 0.4, 1.0)
    val, _ = integrate.quad(lambda y: math.exp(log_likelihood(ch, z, y, a)), -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-7)


def test_continuity_constant_matches_derivative_limit():
    ch = QueryChannel.bsc(0.1)
    q = 0.1
    c = continuity_constant(ch, q, [1e-6])
    # d/dq log q = 1/q dominates d/dq log(1-q) = 1/(1-q)
    assert c == pytest.approx(1 / q, rel=1e-4)


def test_continuity_constant_errors():
    with pytest.raises(DomainError):
        continuity_constant(QueryChannel.awgn(1.0, 0.5), 0.1, [0.01])
    with pytest.raises(DomainError):
        continuity_constant(QueryChannel.bsc(0.1), 0.1, [0.2])
