import numpy as np
import pytest

from fbslq.matrixkit import (
    default_rel_tol,
    is_psd,
    min_eig,
    penrose_residuals,
    pinv,
    range_contains,
    specnorm,
)


def test_pinv_zero_matrix():
    assert np.array_equal(pinv(np.zeros((3, 3))), np.zeros((3, 3)))


def test_pinv_diagonal():
    got = pinv(np.diag([2.0, 0.0]))
    assert np.allclose(got, np.diag([0.5, 0.0]), atol=1e-14)


def test_pinv_column_vector_against_normal_equations():
    m = np.array([[1.0], [1.0]])
    # Full-column-rank oracle: (M^T M)^{-1} M^T.
    oracle = np.linalg.inv(m.T @ m) @ m.T
    assert np.allclose(pinv(m), oracle, atol=1e-14)
    assert np.allclose(pinv(m), [[0.5, 0.5]], atol=1e-14)


def test_pinv_scalar_convention():
    assert pinv(np.array([[4.0]]))[0, 0] == pytest.approx(0.25)
    assert pinv(np.array([[1e-300]]))[0, 0] == pytest.approx(1e300)
    assert pinv(np.array([[0.0]]))[0, 0] == 0.0


def test_pinv_rejects_non_finite():
    with pytest.raises(ValueError):
        pinv(np.array([[np.nan]]))


@pytest.mark.parametrize("shape", [(1, 1), (3, 3), (4, 2), (2, 5)])
def test_penrose_identities_random(shape, rng):
    rel = default_rel_tol(shape)
    for trial in range(50):
        m = rng.standard_normal(shape)
        if trial % 3 == 0 and min(shape) > 1:
            m[:, -1] = m[:, 0]  # force rank deficiency
        bound = 10.0 * rel * max(specnorm(m), 1e-30)
        assert max(penrose_residuals(m, pinv(m))) <= bound


def test_range_contains_identity_and_zero():
    assert range_contains(np.eye(3), np.arange(9.0).reshape(3, 3))
    assert not range_contains(np.zeros((1, 1)), np.array([[2.0]]))


def test_range_contains_rank_one():
    mbig = np.array([[1.0], [1.0]])
    msmall = np.array([[1.0, -1.0], [1.0, -1.0]])
    # Least-squares oracle: residual of each column projection is zero.
    for col in msmall.T:
        _, res, _, _ = np.linalg.lstsq(mbig, col[:, None], rcond=None)
        assert res.size == 0 or res[0] < 1e-24
    assert range_contains(mbig, msmall)
    assert not range_contains(mbig, np.array([[1.0], [-1.0]]))


def test_range_contains_self(rng):
    for _ in range(25):
        m = rng.standard_normal((4, 3))
        assert range_contains(m, m)


def test_range_contains_dimension_mismatch():
    with pytest.raises(ValueError):
        range_contains(np.eye(2), np.eye(3))


def test_is_psd_examples():
    assert is_psd(np.eye(4))
    assert not is_psd(np.diag([1.0, -0.5]))
    # Characteristic polynomial of [[2,1],[1,2]]: eigenvalues {1, 3}.
    assert is_psd(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.isclose(min_eig(np.array([[2.0, 1.0], [1.0, 2.0]])), 1.0)


def test_is_psd_symmetrizes_first():
    m = np.array([[1.0, 1e-13], [0.0, 1.0]])
    assert is_psd(m)


def test_is_psd_rejects_non_square():
    with pytest.raises(ValueError):
        is_psd(np.ones((2, 3)))
