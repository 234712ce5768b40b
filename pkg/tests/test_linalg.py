import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbcompress.errors import NotPositiveDefinite, SingularBlock, SingularPivot
from sbcompress.linalg import (calibration_inverse, downdate_masked, inverse_remove, inverse_remove_block,
                               spd_inverse)

from conftest import random_spd


def shrink(h, removed):
    keep = np.setdiff1d(np.arange(h.shape[0]), removed)
    return h[np.ix_(keep, keep)]


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def test_spd_inverse_examples():
    np.testing.assert_array_equal(spd_inverse(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(spd_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_spd_inverse_damped_matches_solve(rng):
    h = random_spd(rng, 8)
    lam = 0.01 * np.mean(np.diag(h))
    want = np.linalg.solve(h + lam * np.eye(8), np.eye(8))
    got = spd_inverse(h, 0.01)
    assert rel(got, want) < 1e-10
    np.testing.assert_array_equal(got, got.T)
    np.testing.assert_allclose(got @ (h + lam * np.eye(8)), np.eye(8), atol=1e-9)


def test_spd_inverse_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        spd_inverse(np.diag([1.0, -1.0]))


def test_inverse_remove_examples():
    np.testing.assert_allclose(inverse_remove(np.diag([0.5, 0.25]), 0), [[0.25]])
    hinv = np.linalg.inv(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(inverse_remove(hinv, 1), [[0.5]])


def test_inverse_remove_matches_fresh(rng):
    h = random_spd(rng, 10)
    hinv = np.linalg.inv(h)
    for p in range(10):
        assert rel(inverse_remove(hinv, p), np.linalg.inv(shrink(h, [p]))) < 1e-8


def test_inverse_remove_singular_pivot():
    with pytest.raises(SingularPivot):
        inverse_remove(np.diag([1e-14, 1.0]), 0)


def test_block_examples(rng):
    h = random_spd(rng, 6)
    hinv = np.linalg.inv(h)
    np.testing.assert_allclose(inverse_remove_block(hinv, [2]), inverse_remove(hinv, 2), atol=1e-14)
    assert inverse_remove_block(hinv, range(6)).shape == (0, 0)
    np.testing.assert_array_equal(inverse_remove_block(hinv, []), hinv)


def test_block_matches_fresh(rng):
    h = random_spd(rng, 12)
    p = [1, 4, 7, 10]
    assert rel(inverse_remove_block(np.linalg.inv(h), p), np.linalg.inv(shrink(h, p))) < 1e-8


def test_block_singular():
    hinv = np.ones((3, 3)) + 1e-15 * np.eye(3)
    with pytest.raises(SingularBlock):
        inverse_remove_block(hinv, [0, 1])


def test_masked_downdate_keeps_indices(rng):
    h = random_spd(rng, 7)
    hinv = np.linalg.inv(h)
    out = downdate_masked(hinv, [1, 5])
    assert out.shape == (7, 7)
    assert np.all(out[[1, 5]] == 0) and np.all(out[:, [1, 5]] == 0)
    keep = [0, 2, 3, 4, 6]
    assert rel(out[np.ix_(keep, keep)], np.linalg.inv(shrink(h, [1, 5]))) < 1e-8


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(2, 16), data=st.data())
def test_block_equals_sequential_fold(seed, dim, data):
    rng = np.random.default_rng(seed)
    hinv = np.linalg.inv(random_spd(rng, dim, cond=100))
    k = data.draw(st.integers(1, min(8, dim - 1)))
    p = sorted(rng.choice(dim, k, replace=False).tolist())
    seq, alive = hinv, list(range(dim))
    for idx in rng.permutation(p):
        pos = alive.index(idx)
        seq = inverse_remove(seq, pos)
        alive.pop(pos)
    blk = inverse_remove_block(hinv, p)
    assert np.max(np.abs(blk - seq)) <= 1e-9 * max(1.0, np.max(np.abs(seq)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 20))
def test_inverse_residual(seed, dim):
    rng = np.random.default_rng(seed)
    h = random_spd(rng, dim, cond=100)
    lam = 0.01 * np.mean(np.diag(h))
    np.testing.assert_allclose(spd_inverse(h, 0.01) @ (h + lam * np.eye(dim)), np.eye(dim),
                               atol=1e-9)


def test_calibration_inverse(rng):
    np.testing.assert_array_equal(calibration_inverse(np.zeros((3, 3)), 0.01), np.eye(3))
    h = random_spd(rng, 4)
    np.testing.assert_array_equal(calibration_inverse(h, 0.01), spd_inverse(h, 0.01))
    with pytest.raises(NotPositiveDefinite):
        calibration_inverse(np.diag([1.0, 0.0]), 0.0)
