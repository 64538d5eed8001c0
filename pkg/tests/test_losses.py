import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_unit
from cpr.losses import (
    ContrastiveBatch,
    info_nce,
    mil_nce,
    mil_nce_from_logits,
    mil_nce_grad,
)
from cpr.store import ValidationError
from cpr.trainer import ToyEncoder
from oracles import mp_mil_nce


def _orthogonal_batch(n_pos, n_neg, dim=16):
    """Query e0; every key orthogonal to it, so all logits are 0."""
    eye = np.eye(dim)
    q = eye[0]
    keys = eye[1 : 1 + n_pos + n_neg]
    return ContrastiveBatch(q, keys[:n_pos], keys[n_pos:], temperature=1.0)


def random_batch(rng, dim, n_pos, n_neg, tau=0.07, raw_scale=1.0):
    q = rng.standard_normal(dim) * raw_scale
    return ContrastiveBatch(q, random_unit(rng, n_pos, dim), random_unit(rng, n_neg, dim), tau)


class TestExamples:
    def test_info_nce_log4(self):
        assert info_nce(_orthogonal_batch(1, 3)) == pytest.approx(math.log(4), rel=1e-15)

    def test_mil_nce_log4(self):
        assert mil_nce(_orthogonal_batch(2, 6)) == pytest.approx(math.log(4), rel=1e-15)

    def test_large_margin_limit(self):
        q = np.array([1.0, 0.0, 0.0])
        b = ContrastiveBatch(q, q[None, :], np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), temperature=0.001)
        assert 0.0 <= info_nce(b) < 1e-100

    def test_info_nce_needs_one_positive(self):
        with pytest.raises(ValidationError, match="exactly one"):
            info_nce(_orthogonal_batch(2, 3))

    def test_empty_negatives(self):
        b = ContrastiveBatch(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]), np.empty((0, 2)))
        with pytest.raises(ValidationError, match="negative"):
            mil_nce(b)
        with pytest.raises(ValidationError, match="negative"):
            mil_nce_grad(b)

    def test_empty_positives(self):
        b = ContrastiveBatch(np.array([1.0, 0.0]), np.empty((0, 2)), np.array([[0.0, 1.0]]))
        with pytest.raises(ValidationError, match="positive"):
            mil_nce(b)

    def test_rejects_non_unit_keys(self):
        with pytest.raises(ValidationError, match="unit-norm"):
            ContrastiveBatch(np.array([1.0, 0.0]), np.array([[2.0, 0.0]]), np.array([[0.0, 1.0]]))

    def test_rejects_bad_temperature(self):
        with pytest.raises(ValidationError):
            ContrastiveBatch(np.array([1.0, 0.0]), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0.0)

    def test_overflow_safe_at_tiny_temperature(self, rng):
        b = random_batch(rng, 8, 3, 40, tau=1e-4)
        loss, g = mil_nce_grad(b)
        assert np.isfinite(loss) and np.all(np.isfinite(g))


def test_info_nce_matches_extended_precision(rng):
    for _ in range(20):
        b = random_batch(rng, 8, 1, 32)
        want = mp_mil_nce(b.query, b.positive_feats, b.negative_feats, b.temperature)
        assert info_nce(b) == pytest.approx(want, rel=1e-10)


def test_mil_nce_matches_extended_precision(rng):
    for _ in range(20):
        b = random_batch(rng, 8, 5, 64)
        want = mp_mil_nce(b.query, b.positive_feats, b.negative_feats, b.temperature)
        assert mil_nce(b) == pytest.approx(want, rel=1e-10)


def test_single_positive_equals_info_nce(rng):
    for _ in range(20):
        b = random_batch(rng, 12, 1, 20)
        assert mil_nce(b) == info_nce(b)


def test_uniform_logits_gradient():
    # All logits equal: softmax weights are uniform, so the unit-query gradient is
    # (P/(P+N)) * (mean(neg) - mean(pos)) / tau, projected onto the tangent space of q.
    b = _orthogonal_batch(2, 6)
    _, g = mil_nce_grad(b)
    expected = (6 / 8) * (b.negative_feats.mean(0) - b.positive_feats.mean(0))
    expected -= b.query * (b.query @ expected)
    np.testing.assert_allclose(g, expected, atol=1e-15)


def finite_difference(b: ContrastiveBatch, h=1e-5):
    g = np.zeros_like(b.query)
    for i in range(b.query.size):
        e = np.zeros_like(b.query)
        e[i] = h
        up = ContrastiveBatch(b.query + e, b.positive_feats, b.negative_feats, b.temperature)
        dn = ContrastiveBatch(b.query - e, b.positive_feats, b.negative_feats, b.temperature)
        g[i] = (mil_nce(up) - mil_nce(dn)) / (2 * h)
    return g


def test_gradient_matches_finite_differences(rng):
    for _ in range(30):
        dim = int(rng.integers(4, 33))
        b = random_batch(rng, dim, int(rng.integers(1, 9)), int(rng.integers(1, 129)), tau=0.5)
        _, g = mil_nce_grad(b)
        fd = finite_difference(b)
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_gradient_is_orthogonal_to_query(rng):
    b = random_batch(rng, 10, 3, 30, raw_scale=4.0)
    _, g = mil_nce_grad(b)
    assert abs(g @ b.query) < 1e-12 * np.linalg.norm(g) * np.linalg.norm(b.query)


logit_lists = st.lists(st.floats(-50, 50), min_size=1, max_size=20)


@given(logit_lists, logit_lists, st.floats(-1e3, 1e3))
def test_shift_invariance(pos, neg, c):
    base = mil_nce_from_logits(pos, neg)
    shifted = mil_nce_from_logits(np.add(pos, c), np.add(neg, c))
    assert shifted == pytest.approx(base, rel=1e-12, abs=1e-12)


@given(logit_lists, logit_lists, st.data(), st.floats(0.0, 10.0))
def test_monotone_in_logits(pos, neg, data, delta):
    base = mil_nce_from_logits(pos, neg)
    i = data.draw(st.integers(0, len(pos) - 1))
    j = data.draw(st.integers(0, len(neg) - 1))
    up_pos = list(pos)
    up_pos[i] += delta
    up_neg = list(neg)
    up_neg[j] += delta
    assert mil_nce_from_logits(up_pos, neg) <= base
    assert mil_nce_from_logits(pos, up_neg) >= base


@given(logit_lists, logit_lists)
def test_nonnegative(pos, neg):
    assert mil_nce_from_logits(pos, neg) >= 0.0


def test_extreme_logits_do_not_overflow():
    assert mil_nce_from_logits([1e4], [-1e4]) == 0.0
    assert mil_nce_from_logits([-1e4], [1e4]) == pytest.approx(2e4)


def test_encoder_parameter_gradient_matches_finite_differences(rng):
    # The trainer backpropagates through a linear encoder as outer(x, dL/dz).
    h = 1e-6
    for _ in range(5):
        d_in, d_out = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        enc = ToyEncoder(rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out))
        x = rng.standard_normal(d_in)
        pos, neg = random_unit(rng, 3, d_out), random_unit(rng, 20, d_out)

        def loss(e):
            return mil_nce(ContrastiveBatch(e.embed(x), pos, neg, 0.5))

        _, g = mil_nce_grad(ContrastiveBatch(enc.embed(x), pos, neg, 0.5))
        analytic = np.concatenate([np.outer(x, g).ravel(), g])
        fd = np.zeros_like(analytic)
        for j in range(analytic.size):
            up, dn = enc.copy(), enc.copy()
            if j < enc.weight.size:
                up.weight.flat[j] += h
                dn.weight.flat[j] -= h
            else:
                up.bias[j - enc.weight.size] += h
                dn.bias[j - enc.weight.size] -= h
            fd[j] = (loss(up) - loss(dn)) / (2 * h)
        assert np.linalg.norm(analytic - fd) <= 1e-4 * np.linalg.norm(fd)
