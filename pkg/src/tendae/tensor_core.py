"""
Dense complex kernels for third-order tensors.

Tensors are plain ``ndarray`` objects of shape ``(I, J, R)`` where element
``t[i, j, r]`` sits on row ``i``, column ``j`` of frontal slice ``r``. Matrix
vectorization stacks columns (Fortran order), so ``vec(a @ b.T) == kron(b, a)``.

The unfoldings follow the frontal-slice convention

    mode 1:  [T..1, T..2, ..., T..R]            I x JR, column j + r*J
    mode 2:  [T..1^T, T..2^T, ..., T..R^T]      J x IR, column i + r*I
    mode 3:  [vec(T..1), ..., vec(T..R)]^T      R x IJ, column i + j*I

under which a PARAFAC tensor with factors (A, B, C) has unfoldings
A (C kr B)^T, B (C kr A)^T and C (B kr A)^T.
"""
from itertools import combinations

import numpy as np

from .exceptions import DimensionError

#: Singular values below ``RANK_TOL * s_max`` count as zero.
RANK_TOL = 1e-8

#: Largest column count accepted by the brute-force k-rank search.
K_RANK_MAX_COLS = 8


def vec(a):
    """Stack the columns of ``a`` into a single vector."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v, rows, cols):
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise DimensionError(f"cannot unvec {v.size} entries into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def unfold(t, mode):
    """Return the ``mode``-unfolding of a third-order tensor.

    Parameters
    ----------
    t : ndarray, shape (I, J, R)
    mode : {1, 2, 3}

    Returns
    -------
    ndarray
        ``I x JR`` (mode 1), ``J x IR`` (mode 2) or ``R x IJ`` (mode 3).
    """
    _check_mode(mode)
    t = np.asarray(t)
    if t.ndim != 3:
        raise DimensionError(f"expected a third-order tensor, got ndim={t.ndim}")
    I, J, R = t.shape
    if mode == 1:
        return t.reshape(I, J * R, order="F")
    if mode == 2:
        return t.transpose(1, 0, 2).reshape(J, I * R, order="F")
    return t.reshape(I * J, R, order="F").T


def fold(m, mode, dims):
    """Inverse of :func:`unfold`: rebuild the ``dims`` tensor from an unfolding."""
    _check_mode(mode)
    m = np.asarray(m)
    I, J, R = (int(d) for d in dims)
    expected = {1: (I, J * R), 2: (J, I * R), 3: (R, I * J)}[mode]
    if m.shape != expected:
        raise DimensionError(
            f"mode-{mode} unfolding of {dims} must be {expected}, got {m.shape}"
        )
    if mode == 1:
        return m.reshape(I, J, R, order="F")
    if mode == 2:
        return m.reshape(J, I, R, order="F").transpose(1, 0, 2)
    return m.T.reshape(I, J, R, order="F")


def n_mode_product(t, a, mode):
    """Compute ``t x_mode a`` so that ``unfold(result, mode) == a @ unfold(t, mode)``."""
    _check_mode(mode)
    t = np.asarray(t)
    a = np.atleast_2d(a)
    if a.shape[1] != t.shape[mode - 1]:
        raise DimensionError(
            f"matrix has {a.shape[1]} columns but mode-{mode} dimension is "
            f"{t.shape[mode - 1]}"
        )
    dims = list(t.shape)
    dims[mode - 1] = a.shape[0]
    return fold(a @ unfold(t, mode), mode, dims)


def kron(a, b):
    """Kronecker product (thin wrapper kept for a uniform kernel surface)."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def khatri_rao(a, b):
    """Column-wise Kronecker product: column ``r`` is ``kron(a[:, r], b[:, r])``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"Khatri-Rao needs equal column counts, got {a.shape[1]} and {b.shape[1]}"
        )
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def rearrange(c, i1, j1, i2, j2):
    """Block rearrangement that maps Kronecker sums to low-rank matrices.

    ``c`` is read as an ``i1 x j1`` grid of ``i2 x j2`` blocks. Block
    ``(a, b)`` is vectorized into column ``a + b*i1`` of the result, so

        rearrange(sum_k kron(A_k, B_k)) == sum_k vec(B_k) vec(A_k)^T

    with shape ``(i2*j2) x (i1*j1)``. The transpose gives the row-per-block
    orientation.
    """
    c = np.asarray(c)
    if c.shape != (i1 * i2, j1 * j2):
        raise DimensionError(
            f"expected a {(i1 * i2, j1 * j2)} matrix for {i1}x{j1} blocks of "
            f"{i2}x{j2}, got {c.shape}"
        )
    return c.reshape(i1, i2, j1, j2).transpose(3, 1, 2, 0).reshape(i2 * j2, i1 * j1)


def unrearrange(r, i1, j1, i2, j2):
    """Inverse of :func:`rearrange`."""
    r = np.asarray(r)
    if r.shape != (i2 * j2, i1 * j1):
        raise DimensionError(f"expected {(i2 * j2, i1 * j1)}, got {r.shape}")
    return r.reshape(j2, i2, j1, i1).transpose(3, 1, 2, 0).reshape(i1 * i2, j1 * j2)


def parafac_reconstruct(factors):
    """Sum of rank-one terms ``sum_r a_r o b_r o c_r``.

    Parameters
    ----------
    factors : sequence of three ndarray
        ``(A, B, C)`` with a common column count.
    """
    a, b, c = (np.atleast_2d(f) for f in factors)
    if not a.shape[1] == b.shape[1] == c.shape[1]:
        raise DimensionError(
            f"factor ranks differ: {a.shape[1]}, {b.shape[1]}, {c.shape[1]}"
        )
    return fold(a @ khatri_rao(c, b).T, 1, (a.shape[0], b.shape[0], c.shape[0]))


def tucker_reconstruct(core, a, b, c):
    """``core x_1 a x_2 b x_3 c``."""
    core = np.asarray(core)
    for mode, f in enumerate((a, b, c), start=1):
        if np.atleast_2d(f).shape[1] != core.shape[mode - 1]:
            raise DimensionError(
                f"factor {mode} has {np.atleast_2d(f).shape[1]} columns, core "
                f"mode-{mode} dimension is {core.shape[mode - 1]}"
            )
    out = n_mode_product(core, a, 1)
    out = n_mode_product(out, b, 2)
    return n_mode_product(out, c, 3)


def identity_tensor(rank):
    """Third-order superdiagonal identity tensor of size ``rank``."""
    t = np.zeros((rank, rank, rank))
    idx = np.arange(rank)
    t[idx, idx, idx] = 1.0
    return t


def numerical_rank(a, tol=RANK_TOL):
    """Number of singular values above ``tol * s_max``."""
    s = np.linalg.svd(np.atleast_2d(a), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def k_rank(a, tol=RANK_TOL):
    """Kruskal rank: largest k such that every k columns are independent.

    Exhaustive over column subsets, so limited to ``K_RANK_MAX_COLS`` columns.
    """
    a = np.atleast_2d(a)
    n = a.shape[1]
    if n > K_RANK_MAX_COLS:
        raise ValueError(f"k-rank search limited to {K_RANK_MAX_COLS} columns, got {n}")
    norms = np.linalg.norm(a, axis=0)
    k = 0
    for size in range(1, n + 1):
        for cols in combinations(range(n), size):
            sub = a[:, cols]
            # subset rank judged on the subset's own singular values
            s = np.linalg.svd(sub, compute_uv=False)
            scale = max(norms[list(cols)].max(), np.finfo(float).tiny)
            if s.size < size or s[-1] <= tol * scale:
                return k
        k = size
    return k
