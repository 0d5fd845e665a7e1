import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperprune.errors import ArgumentError, DimensionError, StateError
from hyperprune.latent import (
    DEFAULT_TAU,
    LatentVector,
    Mask,
    compute_mask,
    compute_masks,
    proximal_update,
    soft_threshold,
    sparsity_report,
)
from hyperprune.numeric import Tensor

floats = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(floats, st.floats(0, 5))
def test_soft_threshold_is_prox_of_l1(v, t):
    x = soft_threshold(np.array([v]), t)[0]
    # optimality: 0 in (x - v) + t * subdiff|x|
    if x != 0.0:
        assert x - v + t * np.sign(x) == pytest.approx(0.0, abs=1e-9)
    else:
        assert abs(v) <= t + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(floats, min_size=1, max_size=20), st.floats(0, 3))
def test_soft_threshold_shrinks_towards_zero(vs, t):
    v = np.array(vs)
    x = soft_threshold(v, t)
    assert np.all(np.abs(x) <= np.abs(v))
    assert np.all(x * v >= 0)
    np.testing.assert_allclose(np.abs(v) - np.abs(x), np.minimum(np.abs(v), t), atol=1e-12)


def test_soft_threshold_tensor_and_invalid():
    out = soft_threshold(Tensor(np.array([2.0, -0.5])), 1.0)
    assert isinstance(out, Tensor)
    np.testing.assert_array_equal(out.data, [1.0, 0.0])
    with pytest.raises(ArgumentError):
        soft_threshold(np.ones(2), -1.0)


def test_proximal_update_step_size():
    v = LatentVector.ones("a", 4)
    v.values.grad = np.array([0.0, 1.0, -1.0, 0.0])
    proximal_update(v, lr=0.1, lam=0.5)
    # v - lr*g, then shrink by lr*lam = 0.05
    np.testing.assert_allclose(v.values.data, [0.95, 0.85, 1.05, 0.95])
    assert v.values.grad is None


def test_proximal_update_default_shrink_and_fixed_latent():
    v = LatentVector.ones("a", 3)
    for _ in range(10):
        proximal_update(v, grad=np.zeros(3))
    np.testing.assert_allclose(v.values.data, 1.0 - 10 * 2e-4 * 0.5)
    fixed = LatentVector("z", Tensor(np.ones(3), requires_grad=True), prunable=False)
    proximal_update(fixed, grad=np.zeros(3))
    np.testing.assert_array_equal(fixed.values.data, 1.0)


def test_proximal_update_errors():
    v = LatentVector.ones("a", 3)
    with pytest.raises(StateError):
        proximal_update(v)
    with pytest.raises(DimensionError):
        proximal_update(v, grad=np.zeros(2))
    with pytest.raises(ArgumentError):
        proximal_update(v, grad=np.zeros(3), lr=0)


def test_compute_mask_threshold_and_keep_one():
    v = LatentVector("a", Tensor(np.array([0.1, 1e-3, -0.2, 5e-3])))
    np.testing.assert_array_equal(compute_mask(v).bits, [1, 0, 1, 0])
    tiny = LatentVector("b", Tensor(np.array([1e-4, -3e-3, 2e-3])))
    np.testing.assert_array_equal(compute_mask(tiny).bits, [0, 1, 0])
    frozen = LatentVector("z", Tensor(np.zeros(3)), prunable=False)
    assert compute_mask(frozen).kept == 3
    assert DEFAULT_TAU == 5e-3


def test_mask_validation_and_report():
    with pytest.raises(ArgumentError):
        Mask("a", [0, 0, 0])
    with pytest.raises(ArgumentError):
        Mask("a", [1, 2])
    m = Mask("a", [1, 0, 1])
    assert m.kept == 2 and list(m.keep_index) == [0, 2] and len(m) == 3
    lat = [LatentVector("a", Tensor(np.array([1.0, 0.0]))), LatentVector.ones("b", 3)]
    assert set(compute_masks(lat)) == {"a", "b"}
    assert sparsity_report(lat) == {"a": (1, 2), "b": (3, 3)}


def test_latent_vector_must_be_1d():
    with pytest.raises(DimensionError):
        LatentVector("a", Tensor(np.ones((2, 2))))
