import math

import numpy as np
import pytest

from ddh2.errors import ConfigurationError, KernelDomainError
from ddh2.kernels import TABLE1, Kernel, builtin, eval_block, parse_kernel


def test_pointwise_values():
    x, y = np.array([0.0, 0.0, 0.0]), np.array([3.0, 4.0, 0.0])
    assert builtin("coulomb")(x, y) == pytest.approx(0.2)
    assert builtin("coulomb")(x, x) == 0.0
    assert builtin("gaussian", L=5.0)(x, y) == pytest.approx(math.exp(-1.0))
    assert builtin("cosdot")(np.array([1.0, 2.0]), np.array([0.5, 0.25])) == pytest.approx(math.cos(1.0))
    assert builtin("bump")(x, x) == pytest.approx(math.exp(-1.0))
    assert builtin("bump")(x, np.array([4.0, 0.0, 0.0])) == 0.0
    assert builtin("power", p=2)(x, y) == pytest.approx(25.0)
    assert builtin("laplace", L=5.0)(x, y) == pytest.approx(math.exp(-1.0))
    assert builtin("multiquadric", c=1.0)(x, y) == pytest.approx(math.sqrt(26.0))


def test_shifted_multiquadric_is_not_symmetric():
    k = parse_kernel("multiquadric:c=1,a=0;2")
    assert not k.symmetric
    x, y = np.array([0.0, 0.0]), np.array([0.0, 1.0])
    assert k(x, y) != k(y, x)


def test_parse_and_spec_round_trip():
    for text in ("coulomb", "gaussian:L=0.1", "power:p=11.0"):
        k = parse_kernel(text)
        assert parse_kernel(k.spec()).spec() == k.spec()
    assert set(TABLE1) == {"coulomb", "gaussian", "cosdot", "bump"}


@pytest.mark.parametrize("text", ["nope", "gaussian:L", "power"])
def test_bad_kernel_names(text):
    with pytest.raises(ConfigurationError):
        parse_kernel(text)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_values_raise():
    k = Kernel.pointwise(lambda x, y: np.float64(1.0) / np.sum(x - y), name="bad")
    with pytest.raises(KernelDomainError) as info:
        k.block(np.zeros((2, 1)), np.zeros((1, 1)))
    assert info.value.pair is not None


def test_eval_block_uses_indices():
    coords = np.arange(12, dtype=float).reshape(4, 3)
    k = builtin("coulomb")
    B = eval_block(k, [0, 2], [3], coords)
    assert B.shape == (2, 1)
    assert B[1, 0] == pytest.approx(1.0 / np.linalg.norm(coords[2] - coords[3]))


def test_chunked_block_matches():
    rng = np.random.default_rng(0)
    X, Y = rng.random((3000, 3)), rng.random((1500, 3))
    k = builtin("gaussian")
    assert np.array_equal(k.block(X, Y), k.block_fn(X, Y))


@pytest.mark.parametrize("text", ["coulomb", "gaussian:L=0.5", "cosdot", "bump", "laplace",
                                  "power:p=3", "power:p=-1", "multiquadric:c=2"])
def test_symmetric_builtins(text):
    rng = np.random.default_rng(4)
    A, B = rng.random((13, 3)), rng.random((9, 3))
    k = parse_kernel(text)
    assert k.symmetric
    assert np.array_equal(k.block(A, B), k.block(B, A).T)
