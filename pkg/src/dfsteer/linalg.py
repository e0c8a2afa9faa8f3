"""Small dense linear-algebra helpers shared across modules."""

import numpy as np


def sym(a):
    """Return the symmetric part ``(a + a.T) / 2``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def min_eig(a):
    """Smallest eigenvalue of the symmetric part of ``a``."""
    a = sym(a)
    if a.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(a)[0])


def psd_sqrt(a):
    """Unique PSD square root, with negative eigenvalues clamped to zero."""
    vals, vecs = np.linalg.eigh(sym(a))
    vals = np.clip(vals, 0.0, None)
    return sym((vecs * np.sqrt(vals)) @ vecs.T)


def range_projector(a, rtol=1e-12):
    """Orthogonal projector onto the range of the symmetric PSD matrix ``a``."""
    vals, vecs = np.linalg.eigh(sym(a))
    if vals.size == 0:
        return np.zeros_like(vecs)
    cutoff = rtol * max(vals[-1], 0.0)
    keep = vecs[:, vals > cutoff]
    return keep @ keep.T


def inv_sqrt(a, rtol=1e-12):
    """Inverse PSD square root of ``a``.

    Returns ``None`` when ``a`` has an eigenvalue at or below
    ``rtol * lambda_max`` (or is not positive), i.e. when whitening by ``a``
    is undefined.
    """
    vals, vecs = np.linalg.eigh(sym(a))
    if vals[-1] <= 0 or vals[0] <= rtol * vals[-1]:
        return None
    return sym((vecs / np.sqrt(vals)) @ vecs.T)


def block_diag_repeat(block, count):
    """``bdiag(block, ..., block)`` with ``count`` copies."""
    return np.kron(np.eye(count), np.asarray(block, dtype=float))
