"""Dense symmetric linear algebra for inverse-Hessian bookkeeping.

Everything here works in float64 and returns new arrays.  The removal
functions physically delete rows/columns; the compression kernels use an
equivalent logical-mask form (see ``downdate_masked``).
"""
import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, SingularBlock, SingularPivot

PIVOT_EPS = 1e-12
BLOCK_COND_MAX = 1e12


def _as_square(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def symmetrize(a):
    return 0.5 * (a + a.T)


def dampen(h, damp):
    """Return ``h + damp * mean(diag(h)) * I``."""
    h = _as_square(h)
    if damp < 0:
        raise ValueError("damp must be non-negative")
    if h.shape[0] == 0:
        return h.copy()
    lam = damp * float(np.mean(np.diag(h)))
    return h + lam * np.eye(h.shape[0])


def spd_inverse(h, damp=0.0):
    """Inverse of the dampened SPD matrix ``h`` via Cholesky."""
    hd = dampen(h, damp)
    try:
        factor = scipy.linalg.cho_factor(hd, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    inv = scipy.linalg.cho_solve(factor, np.eye(hd.shape[0]))
    return symmetrize(inv)


def calibration_inverse(h, damp):
    """``spd_inverse`` for a calibration Hessian, tolerating silent inputs.

    A module whose inputs never fire has H == 0: every weight change is free,
    so the identity stands in for the inverse (magnitude order, no cross
    compensation).
    """
    h = np.asarray(h, dtype=np.float64)
    if not np.any(h):
        return np.eye(h.shape[0])
    return spd_inverse(h, damp)


def inverse_remove(hinv, p):
    """Inverse of H with row/col ``p`` deleted, given ``hinv`` = H^-1."""
    hinv = _as_square(hinv)
    piv = hinv[p, p]
    if abs(piv) < PIVOT_EPS:
        raise SingularPivot(f"|[H^-1]_{p}{p}| = {abs(piv):.3e} below {PIVOT_EPS}")
    out = hinv - np.outer(hinv[:, p], hinv[p, :]) / piv
    keep = np.arange(hinv.shape[0]) != p
    return symmetrize(out[np.ix_(keep, keep)])


def _block_correction(hinv, idx):
    blk = hinv[np.ix_(idx, idx)]
    if np.linalg.cond(blk) > BLOCK_COND_MAX:
        raise SingularBlock(f"principal block on {idx.tolist()} is numerically singular")
    return hinv[:, idx] @ np.linalg.solve(blk, hinv[idx, :])


def _check_index_set(idx, dim):
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"indices out of range for dimension {dim}")
    if np.unique(idx).size != idx.size:
        raise ValueError("index set contains duplicates")
    return np.sort(idx)


def inverse_remove_block(hinv, indices):
    """Woodbury removal of all indices in one step, then physical deletion."""
    hinv = _as_square(hinv)
    idx = _check_index_set(indices, hinv.shape[0])
    keep = np.ones(hinv.shape[0], bool)
    keep[idx] = False
    if idx.size == 0:
        return hinv.copy()
    if not keep.any():
        return np.zeros((0, 0))
    out = hinv - _block_correction(hinv, idx)
    return symmetrize(out[np.ix_(keep, keep)])


def downdate_masked(hinv, indices):
    """Same update as ``inverse_remove_block`` but keeps the full size.

    Removed rows and columns are set to exactly zero, so surviving indices
    keep their original positions.
    """
    hinv = _as_square(hinv)
    idx = _check_index_set(indices, hinv.shape[0])
    if idx.size == 0:
        return hinv.copy()
    out = symmetrize(hinv - _block_correction(hinv, idx))
    out[idx, :] = 0.0
    out[:, idx] = 0.0
    return out
