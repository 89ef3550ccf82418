import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mre import numcore as nc
from mre.contrastive import cnce_loss, nce_prob, similarity
from mre.exceptions import ContractError, DomainError, ShapeError
from mre.numcore import Tensor
from oracles import brute_force_cnce


def test_similarity_examples():
    assert similarity([1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-15)
    assert similarity([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert similarity([1, 2], [-1, -2]) == pytest.approx(-1.0, abs=1e-15)
    assert similarity([3, 4], [6, 8]) == pytest.approx(1.0, abs=1e-15)


def test_similarity_zero_vector():
    with pytest.raises(DomainError):
        similarity([0, 0], [1, 0])


@settings(max_examples=60)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)),
       st.floats(0.1, 10))
def test_similarity_bounded_symmetric_and_scale_free(x, y, c):
    if np.linalg.norm(x) < 1e-3 or np.linalg.norm(y) < 1e-3:
        return
    s = similarity(x, y)
    assert -1.0 <= s <= 1.0
    assert similarity(y, x) == pytest.approx(s, abs=1e-12)
    assert similarity(c * x, y) == pytest.approx(s, abs=1e-12)


def test_nce_prob_examples():
    assert nce_prob(0, [0.5], 0.1) == 1.0
    assert nce_prob(0, [0.3, 0.3], 0.7) == pytest.approx(0.5, abs=1e-15)
    assert nce_prob(0, [1.0, 0.0], 1.0) == pytest.approx(math.e / (math.e + 1), abs=1e-15)


def test_nce_prob_stable_for_tiny_temperature():
    p = nce_prob(0, [1.0, -1.0], 1e-4)
    assert math.isfinite(p) and p == pytest.approx(1.0)


def test_nce_prob_rejects_non_positive_temperature():
    for tau in (0.0, -1.0):
        with pytest.raises(ContractError):
            nce_prob(0, [1.0, 0.0], tau)


@settings(max_examples=60)
@given(arrays(np.float64, 6, elements=st.floats(-1, 1)), st.floats(0.05, 5))
def test_nce_probs_sum_to_one(s, tau):
    assert sum(nce_prob(i, s, tau) for i in range(6)) == pytest.approx(1.0, abs=1e-12)


def test_cnce_two_sample_hand_set_batch():
    # same-class similarity 1, cross-class -1 in every modality pair
    z = np.array([[[1.0, 0.0]] * 3, [[-1.0, 0.0]] * 3])
    labels = [0, 1]
    value = float(cnce_loss(Tensor(z), labels, tau=1.0).data)
    assert value == pytest.approx(brute_force_cnce(z, labels, 1.0), abs=1e-10)
    p_pos = math.e / (2 * math.e + 2 / math.e)
    p_neg = (1 / math.e) / (2 * math.e + 2 / math.e)
    expected = 3 * (-math.log(p_pos) - math.log(1 - p_neg))
    assert value == pytest.approx(expected, abs=1e-12)


def _draw(rng, B, d, mode):
    z = rng.normal(size=(B, 3, d))
    if mode == "single":
        labels = [0] * B
    elif mode == "singleton":
        labels = list(range(B))
    else:
        labels = rng.integers(0, 3, size=B).tolist()
    return z, labels


@pytest.mark.parametrize("seed, mode", [(10, "single"), (11, "singleton"), (12, "mixed")])
def test_cnce_matches_brute_force(seed, mode):
    rng = np.random.default_rng(seed)
    for _ in range(15):
        B, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        tau = float(rng.uniform(0.05, 2.0))
        z, labels = _draw(rng, B, d, mode)
        got = float(cnce_loss(Tensor(z), labels, tau).data)
        assert abs(got - brute_force_cnce(z, labels, tau)) <= 1e-10


def test_cnce_accepts_three_matrices():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(4, 3, 5))
    labels = [0, 1, 1, 2]
    stacked = float(cnce_loss(Tensor(z), labels).data)
    split = float(cnce_loss([z[:, 0], z[:, 1], z[:, 2]], labels).data)
    assert stacked == split


def test_cnce_single_class_drops_negative_term():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(3, 3, 4))
    value = float(cnce_loss(Tensor(z), [1, 1, 1], 0.5).data)
    assert value == pytest.approx(brute_force_cnce(z, [1, 1, 1], 0.5), abs=1e-10)
    # all nine pairs are positives, so each modality pair contributes -mean(log P) >= log 9
    assert value >= 3 * math.log(9) - 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3, 3), elements=st.floats(-5, 5)), st.lists(st.integers(0, 2), min_size=4, max_size=4),
       st.floats(0.05, 3))
def test_cnce_nonnegative_and_matches_oracle(z, labels, tau):
    if (np.linalg.norm(z, axis=-1) < 1e-3).any():
        return
    value = float(cnce_loss(Tensor(z), labels, tau).data)
    assert value >= 0
    assert value == pytest.approx(brute_force_cnce(z, labels, tau), abs=1e-9)


def test_cnce_is_invariant_to_row_scaling():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(4, 3, 3))
    scaled = z * rng.uniform(0.1, 5.0, size=(4, 3, 1))
    labels = [0, 0, 1, 2]
    assert float(cnce_loss(Tensor(scaled), labels).data) == pytest.approx(float(cnce_loss(Tensor(z), labels).data),
                                                                           abs=1e-12)


def test_cnce_errors():
    z = Tensor(np.ones((2, 3, 2)))
    with pytest.raises(ContractError):
        cnce_loss(z, [0, 1], tau=0.0)
    with pytest.raises(ShapeError):
        cnce_loss(z, [0, 1, 1])
    with pytest.raises(ShapeError):
        cnce_loss(Tensor(np.ones((2, 2, 2))), [0, 1])
    zero = np.ones((2, 3, 2))
    zero[1, 2] = 0.0
    with pytest.raises(DomainError):
        cnce_loss(Tensor(zero), [0, 1])


def test_cnce_gradient_passes_grad_check():
    rng = np.random.default_rng(4)
    z = nc.parameter(rng.normal(size=(4, 3, 5)))
    labels = [0, 1, 0, 2]
    assert nc.grad_check(lambda: cnce_loss(z, labels, tau=0.5), z) < 1e-4
