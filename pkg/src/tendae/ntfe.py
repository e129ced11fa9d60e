"""
Stage two: factor fitting for the angular PARAFAC tensor and the nested
delay-Doppler tensor.

All fits share one stopping rule. With ``e(i) = ||T - T_hat(i)||_F^2`` after
sweep ``i``, iteration stops once ``|e(i-1) - e(i)| < tol * e(i-1)`` or
``e(i)`` has dropped to the floating-point floor ``FLOOR * ||T||^2``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import DimensionError, IdentifiabilityError
from .tensor_core import fold, khatri_rao, parafac_reconstruct, unfold

#: Relative residual energy treated as an exact fit.
FLOOR = 1e-26
#: Relative singular-value cutoff for the least-squares substeps.
RCOND = 1e-10
#: ``"subspace"`` is only meaningful for the inner delay-Doppler fit.
INITS = ("random", "hosvd", "gevd", "subspace")


@dataclass
class AlsOptions:
    """Convergence control shared by every ALS-type loop."""

    max_iter: int = 500
    tol: float = 1e-6
    init: str = "random"
    seed: Optional[int] = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")


@dataclass
class AlsResult:
    factors: list
    iterations: int
    residual_history: list
    converged: bool
    rank_warnings: int = 0
    seed: Optional[int] = None

    @property
    def monotone(self):
        return is_monotone(self.residual_history)


@dataclass
class AngularFactors:
    t_bar_g: np.ndarray
    a_sr: np.ndarray
    b_tx: np.ndarray
    iterations: int
    residual_history: list
    converged: bool
    rank_warnings: int = 0


@dataclass
class DelayDopplerFactors:
    h_hat: np.ndarray
    f_unfold1: np.ndarray
    t_j: np.ndarray
    d_nu: np.ndarray
    c_tau: np.ndarray
    bals_iterations: int
    bals_history: list
    bals_converged: bool
    als_iterations: int
    als_history: list
    als_converged: bool
    rank_warnings: int = 0
    extras: dict = field(default_factory=dict)


def is_monotone(history, rel=1e-9, floor=0.0):
    """True when every step satisfies ``e_i <= e_{i-1} (1 + rel) + floor``."""
    h = np.asarray(history, float)
    return bool(np.all(h[1:] <= h[:-1] * (1 + rel) + floor))


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _lstsq_right(lhs, coeff):
    """Solve ``min_X ||lhs - X coeff||`` and report rank deficiency."""
    sol, _, rank, _ = np.linalg.lstsq(coeff.T, lhs.T, rcond=RCOND)
    return sol.T, rank < coeff.shape[0]


def _stop(prev, cur, tol, scale):
    if cur <= FLOOR * scale:
        return True
    return prev is not None and abs(prev - cur) < tol * prev


def hosvd_init(t, rank, seed=0):
    """Truncated HOSVD: per-mode orthonormal bases and the projected core.

    When a mode dimension is smaller than ``rank`` the basis is completed with
    seeded random columns so that every factor has ``rank`` columns (those
    extra columns are not orthonormal to the rest).

    Returns
    -------
    factors : list of ndarray
    core : ndarray
        ``t`` projected onto the (possibly truncated) bases.
    """
    t = np.asarray(t)
    rng = np.random.default_rng(seed)
    bases, factors = [], []
    for mode in (1, 2, 3):
        u = np.linalg.svd(unfold(t, mode), full_matrices=False)[0]
        u = u[:, :rank]
        bases.append(u)
        if u.shape[1] < rank:
            u = np.hstack([u, _crandn(rng, u.shape[0], rank - u.shape[1])])
        factors.append(u)
    core = t
    for mode, u in enumerate(bases, start=1):
        core = fold(u.conj().T @ unfold(core, mode), mode, _replace(core.shape, mode, u.shape[1]))
    return factors, core


def gevd_init(t, rank, seed=0):
    """Algebraic PARAFAC initializer from a generalized eigenvalue problem.

    For each choice of slicing mode whose two complementary modes have at
    least ``rank`` entries, the tensor is compressed onto the leading
    subspaces of the complementary modes, two seeded random combinations of
    the slices are formed, and the eigenvectors of ``S1 S2^-1`` give the
    first complementary factor. The remaining factors follow by least
    squares. The candidate with the smallest residual is returned. Exact for
    noiseless data when the slice-mode factor has distinct column ratios.
    """
    t = np.asarray(t, dtype=complex)
    rng = np.random.default_rng(seed)
    dims = t.shape
    best, best_res = None, np.inf
    for s_mode in (1, 2, 3):
        e_mode, o_mode = [m for m in (1, 2, 3) if m != s_mode]
        if dims[e_mode - 1] < rank or dims[o_mode - 1] < rank:
            continue
        ue = np.linalg.svd(unfold(t, e_mode), full_matrices=False)[0][:, :rank]
        uo = np.linalg.svd(unfold(t, o_mode), full_matrices=False)[0][:, :rank]
        # move axes to (e, o, s) and compress
        x = np.moveaxis(t, (e_mode - 1, o_mode - 1, s_mode - 1), (0, 1, 2))
        core = np.einsum("ie,jo,ijs->eos", ue.conj(), uo.conj(), x)
        w = _crandn(rng, dims[s_mode - 1], 2)
        s1 = core @ w[:, 0]
        s2 = core @ w[:, 1]
        try:
            _, vecs = np.linalg.eig(s1 @ np.linalg.pinv(s2))
        except np.linalg.LinAlgError:
            continue
        fac_e = ue @ vecs
        factors = [None, None, None]
        factors[e_mode - 1] = fac_e
        # LS for the other two via a rank-wise decomposition of the remainder
        xe = np.linalg.lstsq(fac_e, x.reshape(dims[e_mode - 1], -1), rcond=None)[0]
        xe = xe.reshape(rank, dims[o_mode - 1], dims[s_mode - 1])
        fo = np.zeros((dims[o_mode - 1], rank), complex)
        fs = np.zeros((dims[s_mode - 1], rank), complex)
        for r in range(rank):
            u, sv, vh = np.linalg.svd(xe[r], full_matrices=False)
            fo[:, r] = u[:, 0] * sv[0]
            fs[:, r] = vh[0]
        factors[o_mode - 1] = fo
        factors[s_mode - 1] = fs
        res = np.linalg.norm(t - parafac_reconstruct(factors))
        if res < best_res:
            best, best_res = factors, res
    if best is None:
        return [_crandn(rng, d, rank) for d in dims]
    return best


def _replace(shape, mode, value):
    shape = list(shape)
    shape[mode - 1] = value
    return tuple(shape)


def als_parafac3(t, rank, opts: AlsOptions = None, fixed=None, init=None) -> AlsResult:
    """Rank-``rank`` PARAFAC fit by alternating least squares.

    Parameters
    ----------
    t : ndarray, shape (I, J, R)
    rank : int
    opts : AlsOptions
    fixed : dict, optional
        ``{mode: factor}`` for factors held constant (modes 1-3).
    init : list of ndarray, optional
        Explicit initial factors; overrides ``opts.init``.

    Returns
    -------
    AlsResult
        ``factors`` is ``[A, B, C]`` with ``t ~ sum_r a_r o b_r o c_r``.
    """
    opts = opts or AlsOptions()
    fixed = dict(fixed or {})
    t = np.asarray(t, dtype=complex)
    if t.ndim != 3:
        raise DimensionError(f"expected a third-order tensor, got ndim={t.ndim}")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    dims = t.shape
    # each LS step solves against a Khatri-Rao matrix with prod(other dims) rows
    for mode in (1, 2, 3):
        if mode in fixed:
            continue
        rows = int(np.prod(dims)) // dims[mode - 1]
        if rows < rank:
            raise IdentifiabilityError(
                [f"mode-{mode} LS step has {rows} equations for rank {rank}"]
            )
    if init is not None:
        factors = [np.array(f, dtype=complex) for f in init]
    elif opts.init == "hosvd":
        factors = hosvd_init(t, rank, seed=opts.seed)[0]
    elif opts.init == "gevd":
        factors = gevd_init(t, rank, seed=opts.seed)
    elif opts.init == "subspace":
        raise ValueError("subspace init needs explicit factors; see shift_invariance_init")
    else:
        rng = np.random.default_rng(opts.seed)
        factors = [_crandn(rng, d, rank) for d in dims]
    for mode, f in fixed.items():
        f = np.asarray(f, dtype=complex)
        if f.shape != (dims[mode - 1], rank):
            raise DimensionError(f"fixed factor for mode {mode} has shape {f.shape}")
        factors[mode - 1] = f

    unf = [unfold(t, m) for m in (1, 2, 3)]
    scale = float(np.vdot(t, t).real)
    history = []
    warn_count = 0
    converged = False
    if scale == 0.0:
        factors = [f if (i + 1) in fixed else np.zeros_like(f) for i, f in enumerate(factors)]
        return AlsResult(factors, 0, [0.0], True, 0, opts.seed)

    it = 0
    for it in range(1, opts.max_iter + 1):
        a, b, c = factors
        if 1 not in fixed:
            a, bad = _lstsq_right(unf[0], khatri_rao(c, b).T)
            warn_count += bad
        if 2 not in fixed:
            b, bad = _lstsq_right(unf[1], khatri_rao(c, a).T)
            warn_count += bad
        if 3 not in fixed:
            c, bad = _lstsq_right(unf[2], khatri_rao(b, a).T)
            warn_count += bad
        factors = [a, b, c]
        r = unf[2] - c @ khatri_rao(b, a).T
        e = float(np.vdot(r, r).real)
        prev = history[-1] if history else None
        history.append(e)
        if _stop(prev, e, opts.tol, scale):
            converged = True
            break
    if warn_count:
        warnings.warn(
            f"{warn_count} rank-deficient LS substeps during ALS", RuntimeWarning, stacklevel=2
        )
    return AlsResult(factors, it, history, converged, warn_count, opts.seed)


def als_parafac3_weighted(t, rank, weight, opts: AlsOptions = None, init=None) -> AlsResult:
    """PARAFAC ALS for ``t[i, j, r] = W[j, r] sum_p A[i, p] B[j, p] C[r, p]``.

    ``W`` is a known ``J x R`` elementwise weight shared by every mode-1
    slice. Each update is still an exact least-squares solve, so the residual
    is nonincreasing. Modes 2 and 3 decouple per row.

    Parameters
    ----------
    t : ndarray, shape (I, J, R)
    weight : ndarray, shape (J, R)
    init : list of ndarray, optional
        Initial ``[A, B, C]``; otherwise drawn according to ``opts``.
    """
    opts = opts or AlsOptions()
    t = np.asarray(t, dtype=complex)
    w = np.asarray(weight, dtype=complex)
    i_dim, j_dim, r_dim = t.shape
    if w.shape != (j_dim, r_dim):
        raise DimensionError(f"weight shape {w.shape} != {(j_dim, r_dim)}")
    if init is not None:
        a, b, c = (np.array(f, dtype=complex) for f in init)
    else:
        rng = np.random.default_rng(opts.seed)
        a, b, c = (_crandn(rng, d, rank) for d in t.shape)
    scale = float(np.vdot(t, t).real)
    if scale == 0.0:
        return AlsResult([a * 0, b, c], 0, [0.0], True, 0, opts.seed)
    t1 = t.reshape(i_dim, j_dim * r_dim)
    history, warn_count, converged, it = [], 0, False, 0
    for it in range(1, opts.max_iter + 1):
        z = (w[:, :, None] * b[:, None, :] * c[None, :, :]).reshape(j_dim * r_dim, rank)
        a, bad = _lstsq_right(t1, z.T)
        warn_count += bad
        for j in range(j_dim):
            design = (a[:, None, :] * (w[j, :, None] * c)[None, :, :]).reshape(i_dim * r_dim, rank)
            sol, _, rk, _ = np.linalg.lstsq(design, t[:, j, :].ravel(), rcond=RCOND)
            b[j] = sol
            warn_count += rk < rank
        for r in range(r_dim):
            design = (a[:, None, :] * (w[:, r, None] * b)[None, :, :]).reshape(i_dim * j_dim, rank)
            sol, _, rk, _ = np.linalg.lstsq(design, t[:, :, r].ravel(), rcond=RCOND)
            c[r] = sol
            warn_count += rk < rank
        model = w[None] * np.einsum("ip,jp,rp->ijr", a, b, c)
        diff = t - model
        e = float(np.vdot(diff, diff).real)
        prev = history[-1] if history else None
        history.append(e)
        if _stop(prev, e, opts.tol, scale):
            converged = True
            break
    return AlsResult([a, b, c], it, history, converged, warn_count, opts.seed)


def fit_angular(g_tensor, k, opts: AlsOptions = None, restarts=1) -> AngularFactors:
    """Fit ``G = I x1 T_bar x2 A_sr x3 B_tx`` to the ``K x L_SR x N`` angular tensor.

    Parameters
    ----------
    restarts : int
        Total number of starts allowed. A start that hits ``max_iter``
        without converging (typically an ALS swamp) triggers a fresh random
        start with seed ``opts.seed + 1000 * i``; the lowest final residual
        wins.
    """
    opts = opts or AlsOptions()
    g_tensor = np.asarray(g_tensor)
    _, l_sr, n = g_tensor.shape
    if l_sr * n < k:
        raise IdentifiabilityError([f"L_SR*N >= K violated: {l_sr * n} < {k}"])
    res = als_parafac3(g_tensor, k, opts)
    for i in range(1, restarts):
        if res.converged:
            break
        seed = None if opts.seed is None else opts.seed + 1000 * i
        alt = als_parafac3(g_tensor, k, replace(opts, init="random", seed=seed))
        if alt.residual_history[-1] < res.residual_history[-1]:
            res = alt
    t_bar, a_sr, b_tx = res.factors
    return AngularFactors(
        t_bar_g=t_bar,
        a_sr=a_sr,
        b_tx=b_tx,
        iterations=res.iterations,
        residual_history=res.residual_history,
        converged=res.converged,
        rank_warnings=res.rank_warnings,
    )


def nested_reconstruct(h, x, f1, mq=None):
    """Nested tensor ``MQ x N x K`` with entry ``(c, n, k) = F1[k, c] (H X)[n, c]``."""
    hx = h @ x
    return np.einsum("kc,nc->cnk", f1, hx)


def _bals_h_step(j2, x, f1, a_st=None):
    k, mq = f1.shape
    if a_st is not None:
        # H = b a_st^T with a_st known: only b is estimated
        ax = a_st @ x
        r = (f1 * ax[None, :]).T.reshape(-1, order="F")  # index c + k*MQ
        den = np.vdot(r, r).real
        if den == 0:
            return np.zeros((j2.shape[0], x.shape[0]), complex), True
        b = j2 @ r.conj() / den
        return np.outer(b, a_st), False
    # P[l, c + k*MQ] = X[l, c] F1[k, c]
    p = (x[:, None, :] * f1[None, :, :]).transpose(0, 2, 1).reshape(x.shape[0], mq * k, order="F")
    return _lstsq_right(j2, p)


def _bals_f_step(j_tensor, hx):
    # the mode-3 coefficient matrix is block diagonal, so the LS solution
    # decouples per pilot column c
    num = np.einsum("cnk,nc->kc", j_tensor, hx.conj())
    den = np.sum(np.abs(hx) ** 2, axis=0)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0), int(np.sum(den == 0) > 0)


def shift_invariance_init(f1, m, q, mix=0.6180339887 + 0.3819660113j):
    """Algebraic initializer for the ``K x M x Q`` delay-Doppler tensor.

    The rows of ``[F]_(1)`` span the Kronecker columns ``c_k kron d_k``.
    Shift invariance along q and along m gives two ``K x K`` matrices sharing
    one eigenvector basis; diagonalizing a fixed combination of them pairs
    the delay and Doppler generators automatically. Exact in the noiseless
    case for distinct generators.

    Returns
    -------
    list of ndarray
        ``[T_J, D_nu, C_tau]`` initial factors.
    """
    k, mq = f1.shape
    v = f1.T
    idx = np.arange(mq).reshape(q, m)  # idx[q, m] = q*M + m
    psi = np.zeros((k, k), complex)
    if q > 1:
        psi += np.linalg.lstsq(v[idx[:-1].ravel()], v[idx[1:].ravel()], rcond=None)[0]
    if m > 1:
        psi += mix * np.linalg.lstsq(v[idx[:, :-1].ravel()], v[idx[:, 1:].ravel()], rcond=None)[0]
    _, e = np.linalg.eig(psi)
    cols = v @ e
    c_tau = np.zeros((q, k), complex)
    d_nu = np.zeros((m, k), complex)
    for r in range(k):
        u, s, vh = np.linalg.svd(cols[:, r].reshape(q, m))
        c_tau[:, r] = u[:, 0] * np.sqrt(s[0])
        d_nu[:, r] = vh[0] * np.sqrt(s[0])
    t_j = _lstsq_right(f1, khatri_rao(c_tau, d_nu).T)[0]
    return [t_j, d_nu, c_tau]


def fit_nested(
    j_tensor, x, k, opts: AlsOptions = None, m=None, q=None, opts_inner=None, a_st=None
):
    """Fit the nested delay-Doppler model.

    Loop 1 (bilinear ALS) estimates ``H`` and ``[F]_(1)`` in
    ``J = I x1 I_MQ x2 HX x3 [F]_(1)^T``; the mode-1 identity is never
    updated. Loop 2 fits the ``K x M x Q`` tensor folded from ``[F]_(1)``
    with factors ``(T_J, D_nu, C_tau)``.

    Parameters
    ----------
    j_tensor : ndarray, shape (MQ, N, K)
    x : ndarray, shape (L_ST, MQ)
    k : int
    m, q : int
        Symbol and subcarrier counts with ``m * q == MQ``.
    a_st : ndarray, optional
        Known transmitter steering vector. With it, ``H`` is constrained to
        ``b a_st^T``. Without it, ``H`` is unconstrained and ``[F]_(1)`` is
        only determined up to a per-pilot-column scaling whenever ``H`` has
        rank one.
    """
    opts = opts or AlsOptions()
    opts_inner = opts_inner or opts
    j_tensor = np.asarray(j_tensor, dtype=complex)
    mq, n, kk = j_tensor.shape
    l_st = x.shape[0]
    if x.shape[1] != mq:
        raise DimensionError(f"pilot has {x.shape[1]} columns, tensor mode 1 is {mq}")
    if m is None or q is None or m * q != mq:
        raise DimensionError(f"need m*q == MQ={mq}, got m={m}, q={q}")
    violations = []
    if mq < l_st:
        violations.append(f"MQ >= L_ST violated: {mq} < {l_st}")
    if mq < k:
        violations.append(f"MQ >= K violated: {mq} < {k}")
    if violations:
        raise IdentifiabilityError(violations)

    rng = np.random.default_rng(opts.seed)
    j2 = unfold(j_tensor, 2)
    scale = float(np.vdot(j_tensor, j_tensor).real)
    if opts.init == "hosvd":
        # project onto the dominant mode-2 singular vector (H has rank one)
        u = np.linalg.svd(j2, full_matrices=False)[0][:, 0]
        f1 = np.einsum("cnk,n->kc", j_tensor, u.conj())
    else:
        f1 = _crandn(rng, kk, mq)
    h = np.zeros((n, l_st), complex)
    hist, warn_count, converged, it = [], 0, False, 0
    if scale == 0.0:
        hist, converged = [0.0], True
        f1 = np.zeros_like(f1)
    else:
        for it in range(1, opts.max_iter + 1):
            h, bad = _bals_h_step(j2, x, f1, a_st)
            warn_count += bad
            f1, bad = _bals_f_step(j_tensor, h @ x)
            warn_count += bad
            r = j_tensor - nested_reconstruct(h, x, f1)
            e = float(np.vdot(r, r).real)
            prev = hist[-1] if hist else None
            hist.append(e)
            if _stop(prev, e, opts.tol, scale):
                converged = True
                break

    init = None
    if opts_inner.init == "subspace" and scale > 0:
        init = shift_invariance_init(f1, m, q)
    if a_st is None:
        inner = als_parafac3(fold(f1, 1, (kk, m, q)), k, opts_inner, init=init)
    else:
        # fit F1 diag(a_st^T X), whose noise is white, instead of F1 itself;
        # the weight is reshaped so that W[m, q] multiplies column m + q*M
        ax = a_st @ x
        if init is None and opts_inner.init in ("hosvd", "gevd"):
            init = als_parafac3(fold(f1, 1, (kk, m, q)), k, replace(opts_inner, max_iter=1)).factors
        inner = als_parafac3_weighted(
            fold(f1 * ax[None, :], 1, (kk, m, q)),
            k,
            ax.reshape(m, q, order="F"),
            opts_inner,
            init=init,
        )
    t_j, d_nu, c_tau = inner.factors
    return DelayDopplerFactors(
        h_hat=h,
        f_unfold1=f1,
        t_j=t_j,
        d_nu=d_nu,
        c_tau=c_tau,
        bals_iterations=it,
        bals_history=hist,
        bals_converged=converged,
        als_iterations=inner.iterations,
        als_history=inner.residual_history,
        als_converged=inner.converged,
        rank_warnings=warn_count + inner.rank_warnings,
    )


def dump_residual_trace(path, traces):
    """Write ``{name: history}`` as CSV rows ``(loop, iteration, residual)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loop", "iteration", "residual"])
        for name, hist in traces.items():
            for i, e in enumerate(hist, start=1):
                w.writerow([name, i, repr(float(e))])
