"""
Stage one: remove the RIS schedule and split the filtered signal into
per-target subspaces.

For a beyond-diagonal RIS the filtered signal is a sum of K Kronecker
products, so its block rearrangement has rank K and a truncated SVD solves
the Kronecker-sum approximation. For a diagonal RIS the terms are
Khatri-Rao products instead; folding the filtered signal into an
``L_SR x MQ x N`` tensor turns that problem into a rank-K PARAFAC fit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DimensionError, FilteringError
from .scenario import BD, DIAGONAL
from .tensor_core import RANK_TOL, fold, rearrange, unrearrange

#: Schedules whose condition number exceeds this are rejected.
MAX_SCHEDULE_COND = 1e10


@dataclass
class FilteredSignal:
    """``Y' = Y S^+`` together with the block sizes needed to rearrange it."""

    y_prime: np.ndarray
    mode: str
    l_sr: int
    mq: int
    n: int

    def __post_init__(self):
        cols = self.n * self.n if self.mode == BD else self.n
        if self.y_prime.shape != (self.l_sr * self.mq, cols):
            raise DimensionError(
                f"filtered signal shape {self.y_prime.shape} != {(self.l_sr * self.mq, cols)}"
            )
        if not np.all(np.isfinite(self.y_prime)):
            raise FilteringError("filtered signal contains non-finite entries")

    def rearranged(self):
        """``L_SR N x MQ N`` matrix equal to ``sum_k vec(G_k) vec(J_k^T)^T`` (BD only)."""
        if self.mode != BD:
            raise ValueError("rearrangement is defined for the BD architecture only")
        return rearrange(self.y_prime, self.mq, self.n, self.l_sr, self.n)


@dataclass
class KsaFactors:
    """Rank-K subspace estimates.

    ``g_hat`` and ``j_hat`` hold the leading left singular vectors and the
    conjugated right singular vectors of the rearranged signal. The tensors
    absorb ``sqrt(sigma)`` on each side, so that ``unfold(tensor_g, 1).T @
    unfold(tensor_j, 3)`` reproduces the rank-K truncation.
    """

    g_hat: np.ndarray
    j_hat: np.ndarray
    singular_values: np.ndarray
    tensor_g: np.ndarray
    tensor_j: np.ndarray
    tail_energy: float = 0.0
    all_singular_values: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def rank(self):
        return len(self.singular_values)

    def truncation(self):
        """``g_hat diag(sigma) j_hat^T``."""
        return (self.g_hat * self.singular_values) @ self.j_hat.T


def right_filter(y, schedule, mode, l_sr, mq, n, max_cond=MAX_SCHEDULE_COND) -> FilteredSignal:
    """Right-multiply the received signal by the pseudoinverse of the schedule.

    Parameters
    ----------
    y : ndarray, (L_SR MQ) x T
    schedule : ndarray
        ``N^2 x T`` (BD) or ``N x T`` (diagonal) stacked RIS configurations.

    Raises
    ------
    FilteringError
        If the schedule is not full row rank.
    """
    schedule = np.asarray(schedule)
    rows = n * n if mode == BD else n
    if schedule.shape[0] != rows or y.shape[1] != schedule.shape[1]:
        raise DimensionError(
            f"schedule {schedule.shape} incompatible with signal {y.shape} for N={n}, mode={mode}"
        )
    if schedule.shape[1] < rows:
        raise FilteringError(f"schedule has T={schedule.shape[1]} < {rows} rows; not right-invertible")
    u, s, vh = np.linalg.svd(schedule, full_matrices=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > max_cond:
        raise FilteringError(f"schedule is rank deficient (condition number {cond:.3e})")
    # Y' = Y S^+ with S^+ = V diag(1/s) U^H
    y_prime = ((y @ vh.conj().T) / s) @ u.conj().T
    return FilteredSignal(y_prime=y_prime, mode=mode, l_sr=l_sr, mq=mq, n=n)


def fold_ksa_tensors(g_hat, j_hat, sigma, l_sr, mq, n):
    """Build the angular tensor (K x L_SR x N) and the nested tensor (MQ x N x K)."""
    k = g_hat.shape[1]
    root = np.sqrt(sigma)
    tensor_g = fold((g_hat * root).T, 1, (k, l_sr, n))
    tensor_j = fold((j_hat * root).T, 3, (mq, n, k))
    return tensor_g, tensor_j


def ksa_rank_k(f: FilteredSignal, k: int) -> KsaFactors:
    """Rank-K Kronecker-sum approximation via a truncated SVD.

    Warns (does not fail) when ``k`` exceeds the numerical rank of the
    rearranged matrix.
    """
    if f.mode != BD:
        raise ValueError("ksa_rank_k needs a BD filtered signal; use krsa_rank_k")
    r = f.rearranged()
    if k < 1 or k > min(r.shape):
        raise ValueError(f"rank {k} outside [1, {min(r.shape)}]")
    u, s, vh = np.linalg.svd(r, full_matrices=False)
    nr = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
    tail = float(np.sqrt(np.sum(s[k:] ** 2)))
    if k > nr:
        warnings.warn(
            f"requested rank {k} exceeds numerical rank {nr}; tail energy {tail:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    g_hat = u[:, :k]
    j_hat = vh[:k].T  # conj(V) restricted to k columns
    tg, tj = fold_ksa_tensors(g_hat, j_hat, s[:k], f.l_sr, f.mq, f.n)
    return KsaFactors(
        g_hat=g_hat,
        j_hat=j_hat,
        singular_values=s[:k].copy(),
        tensor_g=tg,
        tensor_j=tj,
        tail_energy=tail,
        all_singular_values=s,
    )


def schedule_metric(schedule):
    """``S S^H``: the column metric under which the filtered-domain fit matches the data-domain LS."""
    schedule = np.asarray(schedule)
    return schedule @ schedule.conj().T


def _kron_factors(kf: KsaFactors, l_sr, mq, n):
    root = np.sqrt(kf.singular_values)
    g = (kf.g_hat * root).T.reshape(-1, l_sr, n, order="F")  # G_k, L_SR x N
    jt = (kf.j_hat * root).T.reshape(-1, mq, n, order="F")  # J_k^T, MQ x N
    return g, jt.transpose(0, 2, 1)


def _weighted_cost(f, pm, g, j):
    model = sum(np.kron(jk.T, gk) for gk, jk in zip(g, j))
    e = model - f
    return float(np.vdot(e, e @ pm).real)


def ksa_weighted(f: FilteredSignal, schedule, k: int, init: Optional[KsaFactors] = None,
                 max_iter=50, tol=1e-9):
    """Rank-K Kronecker-sum fit in the metric of the RIS schedule.

    Minimizes ``||(sum_k J_k^T kron G_k - Y') S||_F^2``, which equals the
    data-domain residual ``||Y - sum_k (J_k^T kron G_k) S||_F^2`` up to a
    constant. The plain truncated SVD ignores the ``(S S^H)^{-1}`` coloring
    that ``Y S^+`` imposes on the noise. Alternates exact solves for the
    ``G_k`` and ``J_k`` blocks starting from ``init`` (the SVD truncation by
    default); the cost is nonincreasing.

    Returns
    -------
    KsaFactors
        Singular vectors of the refined rank-K rearranged matrix. ``extras``
        holds ``cost_history`` and ``iterations``.
    """
    if f.mode != BD:
        raise ValueError("ksa_weighted needs a BD filtered signal")
    l_sr, mq, n = f.l_sr, f.mq, f.n
    kf = init if init is not None else ksa_rank_k(f, k)
    g, j = _kron_factors(kf, l_sr, mq, n)
    pm = schedule_metric(schedule)
    p4 = pm.reshape(n, n, n, n, order="F")
    fp4 = (f.y_prime @ pm).reshape(l_sr, mq, n, n, order="F")
    history = [_weighted_cost(f.y_prime, pm, g, j)]
    ridge = 1e-14 * np.eye(k * n)
    for _ in range(max_iter):
        g_old, j_old = g, j
        # G step: row l of every G_k solves x A = b
        cj = np.einsum("kpc,KPc->kpKP", j, j.conj())
        a = np.einsum("npNP,kpKP->knKN", p4, cj, optimize=True).reshape(k * n, k * n)
        b = np.einsum("acNP,KPc->aKN", fp4, j.conj(), optimize=True).reshape(l_sr, k * n)
        x = np.linalg.solve(a.T + ridge * np.trace(a).real, b.T).T
        g = x.reshape(l_sr, k, n).transpose(1, 0, 2)
        # J step: column c of every J_k solves y A' = b'
        dg = np.einsum("kan,KaN->knKN", g, g.conj())
        a = np.einsum("npNP,knKN->kpKP", p4, dg, optimize=True).reshape(k * n, k * n)
        b = np.einsum("acNP,KaN->cKP", fp4, g.conj(), optimize=True).reshape(mq, k * n)
        y = np.linalg.solve(a.T + ridge * np.trace(a).real, b.T).T
        j = y.reshape(mq, k, n).transpose(1, 2, 0)
        cost = _weighted_cost(f.y_prime, pm, g, j)
        if cost > history[-1]:
            # rounding-level increase: keep the previous iterate
            g, j = g_old, j_old
            break
        history.append(cost)
        if history[-2] - cost <= tol * history[-2]:
            break
    r = np.stack([gk.reshape(-1, order="F") for gk in g], 1) @ np.stack(
        [jk.T.reshape(-1, order="F") for jk in j], 1
    ).T
    u, s, vh = np.linalg.svd(r, full_matrices=False)
    g_hat, j_hat = u[:, :k], vh[:k].T
    tg, tj = fold_ksa_tensors(g_hat, j_hat, s[:k], l_sr, mq, n)
    return KsaFactors(
        g_hat=g_hat,
        j_hat=j_hat,
        singular_values=s[:k].copy(),
        tensor_g=tg,
        tensor_j=tj,
        tail_energy=kf.tail_energy,
        all_singular_values=kf.all_singular_values,
        extras={"cost_history": history, "iterations": len(history) - 1},
    )


def ksa_reconstruct(factors: KsaFactors, l_sr, mq, n):
    """Filtered-domain signal ``sum_k J_k^T kron G_k`` implied by the truncation."""
    return unrearrange(factors.truncation(), mq, n, l_sr, n)


def elbow_rank(singular_values, ratio=10.0):
    """Diagnostic rank guess: position of the largest consecutive gap above ``ratio``."""
    s = np.asarray(singular_values, float)
    s = s[s > 0]
    if s.size < 2:
        return int(s.size)
    gaps = s[:-1] / s[1:]
    i = int(np.argmax(gaps))
    return i + 1 if gaps[i] >= ratio else int(s.size)


def krsa_tensor(f: FilteredSignal):
    """Fold a diagonal-RIS filtered signal into an ``L_SR x MQ x N`` tensor.

    Slice ``n`` equals ``sum_k G_k[:, n] J_k[n, :]``.
    """
    if f.mode != DIAGONAL:
        raise ValueError("krsa_tensor needs a diagonal-RIS filtered signal")
    return f.y_prime.reshape(f.l_sr, f.mq, f.n, order="F")


def krsa_rank_k(f: FilteredSignal, k: int, als_opts=None):
    """Rank-K Khatri-Rao-sum approximation by PARAFAC of the folded signal.

    Returns
    -------
    KsaFactors
        ``g_hat`` columns estimate ``vec(G_k)`` and ``j_hat`` columns estimate
        ``vec(J_k^T)``, each up to a complex scale and a common permutation.
        The raw PARAFAC factors and fit metadata are in ``extras``:
        ``a`` (L_SR x K), ``w`` (MQ x K), ``p`` (N x K) and ``fit``.
    """
    from .ntfe import AlsOptions, als_parafac3

    opts = als_opts or AlsOptions()
    t = krsa_tensor(f)
    fit = als_parafac3(t, k, opts)
    a, w, p = fit.factors
    # balance column norms across the three factors
    na, nw, np_ = (np.linalg.norm(x, axis=0) for x in (a, w, p))
    scale = np.cbrt(na * nw * np_)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(na > 0, a / na * scale, 0)
        w = np.where(nw > 0, w / nw * scale, 0)
        p = np.where(np_ > 0, p / np_ * scale, 0)
    # vec(G_k) = p_k kron a_k; vec(J_k^T) = p_k kron w_k  (J_k[n, :] = p_k[n] w_k^T)
    g_hat = np.einsum("nk,lk->nlk", p, a).reshape(f.n * f.l_sr, k)
    j_hat = np.einsum("nk,ck->nck", np.ones_like(p), w).reshape(f.n * f.mq, k)
    sigma = np.ones(k)
    tg, tj = fold_ksa_tensors(g_hat, j_hat, sigma, f.l_sr, f.mq, f.n)
    return KsaFactors(
        g_hat=g_hat,
        j_hat=j_hat,
        singular_values=sigma,
        tensor_g=tg,
        tensor_j=tj,
        tail_energy=float(np.sqrt(fit.residual_history[-1])) if fit.residual_history else 0.0,
        extras={"a": a, "w": w, "p": p, "fit": fit},
    )
