"""
Parameter extraction: shift-invariance frequency estimation, angle
inversion, manifold refinement, closed-form gains and target matching.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import DimensionError, InversionDomainError
from .scenario import ArrayGeometry, TargetParams, ura_from_frequencies, ura_steering
from .tensor_core import khatri_rao

#: ``sin(phi)`` below this makes the elevation inversion singular.
SINGULAR_SIN = 1e-12


@dataclass
class TargetEstimate:
    """Estimated parameters of one target. RIS departure angles are ``None``
    when the architecture cannot separate them (diagonal RIS)."""

    phi_sr: float
    theta_sr: float
    phi_ris_d: Optional[float]
    theta_ris_d: Optional[float]
    tau: float
    nu: float
    alpha: complex


@dataclass
class EstimateReport:
    targets: list
    phi_ris_a: Optional[float]
    theta_ris_a: Optional[float]
    permutation: Optional[tuple] = None
    diagnostics: dict = field(default_factory=dict)

    def matched(self):
        """Targets reordered so that entry ``i`` pairs with ground-truth target ``i``."""
        if self.permutation is None:
            return list(self.targets)
        out = [None] * len(self.targets)
        for est, truth in enumerate(self.permutation):
            out[truth] = self.targets[est]
        return out


def esprit_1d(v):
    """Single-source shift-invariance frequency estimate.

    Returns ``angle(rho)`` for the least-squares ``rho`` in
    ``v[1:] ~ rho v[:-1]``, in ``(-pi, pi]``.
    """
    v = np.asarray(v).ravel()
    if v.size < 2:
        raise DimensionError("ESPRIT needs at least two samples")
    den = np.vdot(v[:-1], v[:-1]).real
    if den == 0:
        raise ValueError("ESPRIT input is identically zero")
    rho = np.vdot(v[:-1], v[1:]) / den
    return float(np.angle(rho))


def esprit_1d_multilag(v, weights=None, max_freq=np.pi, rel=0.1):
    """Shift-invariance frequency estimate using every displacement.

    Lag-``d`` correlations of the whitened vector ``weights * v`` are formed
    for ``d = d0 .. n-1``. Each phase is unwrapped against the running
    estimate and the estimate is the weighted LS slope of phase against lag.
    ``d0`` is the smallest lag whose expected correlation energy is at least
    ``rel`` times the best among lags that cannot alias for frequencies up to
    ``max_freq``. With uniform weights ``d0`` is 1.

    Parameters
    ----------
    v : array_like
        Vandermonde-like vector ``s exp(j w i)`` plus noise whose standard
        deviation at entry ``i`` is proportional to ``1 / weights[i]``.
    weights : array_like, optional
        Per-entry amplitude profile (defaults to ones).
    max_freq : float
        Known bound on ``|w|`` in radians per sample.

    Returns
    -------
    float
        Frequency in radians per sample.
    """
    v = np.asarray(v, complex).ravel()
    n = v.size
    if n < 2:
        raise DimensionError("ESPRIT needs at least two samples")
    a = np.ones(n) if weights is None else np.abs(np.asarray(weights, float).ravel())
    if a.shape != v.shape:
        raise DimensionError(f"weights length {a.size} != vector length {n}")
    if not np.any(v):
        raise ValueError("ESPRIT input is identically zero")
    p = a**2
    energy = np.array([np.sum(p[:-d] * p[d:]) for d in range(1, n)])
    safe = [d for d in range(1, n) if d == 1 or d * max_freq < np.pi]
    best = max(energy[d - 1] for d in safe)
    d0 = min(d for d in safe if energy[d - 1] >= rel * best)
    vt = a * v
    est, num, den = None, 0.0, 0.0
    for d in range(d0, n):
        r = np.sum(a[:-d] * a[d:] * np.conj(vt[:-d]) * vt[d:])
        g = abs(r)
        if g == 0:
            continue
        ph = np.angle(r)
        if est is not None:
            ph += 2 * np.pi * np.round((est * d - ph) / (2 * np.pi))
        num += g * d * ph
        den += g * d * d
        est = num / den
    if est is None:
        raise ValueError("no usable lag: weights vanish on every shifted pair")
    # fold back to (-pi, pi]
    return float(np.angle(np.exp(1j * est)))


def _shift_ratio(grid, axis):
    a = np.take(grid, range(grid.shape[axis] - 1), axis=axis)
    b = np.take(grid, range(1, grid.shape[axis]), axis=axis)
    den = np.vdot(a, a).real
    if den == 0:
        raise ValueError("ESPRIT input is identically zero")
    return np.vdot(a, b) / den


def esprit_2d_frequencies(v, n_y, n_z):
    """Spatial frequencies ``(mu, psi)`` of a URA response (single source).

    The vector is read as an ``n_y x n_z`` grid (element ``iy*n_z + iz``) and
    the shift-invariance equations of all parallel subarrays along each axis
    are solved jointly. An axis of length one yields frequency 0.
    """
    v = np.asarray(v).ravel()
    if v.size != n_y * n_z:
        raise DimensionError(f"vector length {v.size} != {n_y}x{n_z}")
    grid = v.reshape(n_y, n_z)
    mu = -np.angle(_shift_ratio(grid, 0)) if n_y > 1 else 0.0
    psi = -np.angle(_shift_ratio(grid, 1)) if n_z > 1 else 0.0
    return float(mu), float(psi)


def _unwrap_nonneg(w):
    # true spatial frequencies lie in [0, pi); values in (-pi, -pi/2) are wrapped
    return w + 2 * np.pi if w < -np.pi / 2 else w


def angles_from_frequencies(mu, psi, clip=False):
    """Invert ``mu = pi sin(phi) sin(theta)``, ``psi = pi cos(phi)`` on (0, pi/2).

    Returns
    -------
    phi, theta : float
    clipped : bool
        True when an argument had to be clipped into the branch.

    Raises
    ------
    InversionDomainError
        Out-of-branch arguments when ``clip`` is False.
    """
    mu, psi = _unwrap_nonneg(mu), _unwrap_nonneg(psi)
    clipped = False
    x = psi / np.pi
    if not 0.0 <= x <= 1.0:
        if not clip:
            raise InversionDomainError(f"psi/pi = {x:.6g} outside [0, 1]")
        x, clipped = float(np.clip(x, 0.0, 1.0)), True
    phi = float(np.arccos(x))
    s = np.sin(phi)
    if s < SINGULAR_SIN:
        if not clip:
            raise InversionDomainError("singular elevation: sin(phi) ~ 0")
        return phi, 0.0, True
    y = mu / (np.pi * s)
    if not 0.0 <= y <= 1.0:
        if not clip:
            raise InversionDomainError(f"mu/(pi sin phi) = {y:.6g} outside [0, 1]")
        y, clipped = float(np.clip(y, 0.0, 1.0)), True
    return phi, float(np.arcsin(y)), clipped


def esprit_2d(v, geom: ArrayGeometry, clip=False):
    """Azimuth and elevation ``(phi, theta)`` of a single URA response."""
    mu, psi = esprit_2d_frequencies(v, geom.n_y, geom.n_z)
    phi, theta, _ = angles_from_frequencies(mu, psi, clip=clip)
    return phi, theta


def extract_per_target(factor, k=None):
    """Columns ``sqrt(sigma_k) u_k`` of the rank-K SVD of a factor matrix."""
    factor = np.atleast_2d(factor)
    k = factor.shape[1] if k is None else k
    if k > min(factor.shape):
        raise DimensionError(f"rank {k} exceeds factor shape {factor.shape}")
    u, s, _ = np.linalg.svd(factor, full_matrices=False)
    return u[:, :k] * np.sqrt(s[:k])


def delay_from_frequency(omega, delta_f):
    """``tau = -omega / (2 pi delta_f)`` for ``c(tau)`` phase increments."""
    return -omega / (2 * np.pi * delta_f)


def doppler_from_frequency(omega, t_s):
    """``nu = omega / (2 pi t_s)`` for ``d(nu)`` phase increments."""
    return omega / (2 * np.pi * t_s)


def refine_manifold(geom: ArrayGeometry, angles):
    """Stack exact steering vectors for a list of ``(phi, theta)`` pairs."""
    return np.stack([ura_steering(geom, p, t) for p, t in angles], axis=1)


def gain_design_bd(g_bar, j_bar):
    """``J_bar^T kr G_bar`` with ``G_bar`` L_SR N x K and ``J_bar`` K x MQN."""
    return khatri_rao(j_bar.T, g_bar)


def estimate_gains(r_y, g_bar, j_bar):
    """Closed-form gains ``(J_bar^T kr G_bar)^+ vec(r_y)``.

    Parameters
    ----------
    r_y : ndarray, L_SR N x MQ N
        Rearranged (reconstructed) filtered signal.
    g_bar : ndarray, L_SR N x K
    j_bar : ndarray, K x MQ N
    """
    design = gain_design_bd(g_bar, j_bar)
    return solve_gains(design, r_y.reshape(-1, order="F"))


def solve_gains(design, rhs):
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise np.linalg.LinAlgError("gain design matrix is rank deficient")
    return np.linalg.lstsq(design, rhs, rcond=None)[0]


def gain_designs(g_bar, j_bar, l_sr, mq, n, bd=True):
    """Filtered-domain unit-gain terms ``D_k`` so that ``Y' ~ sum_k alpha_k D_k``.

    BD: ``D_k = J_k^T kron G_k`` with ``G_k`` from column ``k`` of ``g_bar``
    and ``J_k^T`` from row ``k`` of ``j_bar``. Diagonal: ``D_k = w_k kron G_k``
    with ``w_k`` the ``MQ``-long row ``k`` of ``j_bar``.
    """
    out = []
    for k in range(g_bar.shape[1]):
        gk = g_bar[:, k].reshape(l_sr, n, order="F")
        if bd:
            out.append(np.kron(j_bar[k].reshape(mq, n, order="F"), gk))
        else:
            out.append(np.kron(j_bar[k][:, None], gk))
    return out


def estimate_gains_weighted(y_prime, designs, metric):
    """Gains minimizing ``sum_rows (E P E^H)`` for ``E = sum_k alpha_k D_k - Y'``.

    With ``P = S S^H`` this is the data-domain least-squares fit
    ``||Y - sum_k alpha_k D_k S||_F^2``.
    """
    dp = [d @ metric for d in designs]
    k = len(designs)
    h = np.empty((k, k), complex)
    rhs = np.empty(k, complex)
    for i in range(k):
        rhs[i] = np.vdot(designs[i], y_prime @ metric)
        for jj in range(k):
            h[i, jj] = np.vdot(designs[i], dp[jj])
    return solve_gains(h, rhs)


def pair_branches(g_bar, j_bar, r_y):
    """Column order of ``j_bar`` rows that matches ``g_bar`` columns.

    ``W = G_bar^+ R J_bar^+`` is close to ``P D(alpha)`` for the true pairing
    ``P``; the assignment maximizing ``sum |W[k, perm[k]]|`` is returned.
    """
    w = np.linalg.pinv(g_bar) @ r_y @ np.linalg.pinv(j_bar)
    rows, cols = linear_sum_assignment(-np.abs(w))
    perm = np.empty(len(rows), int)
    perm[rows] = cols
    return perm, w


def _target_cost(truth: TargetParams, est: TargetEstimate, t_s):
    c = abs(truth.tau - est.tau) / t_s + abs(truth.nu - est.nu) * t_s
    c += abs(truth.phi_sr - est.phi_sr) + abs(truth.theta_sr - est.theta_sr)
    if est.phi_ris_d is not None:
        c += abs(truth.phi_ris_d - est.phi_ris_d) + abs(truth.theta_ris_d - est.theta_ris_d)
    return c


def match_targets(truth, estimates, t_s, max_k=6):
    """Exhaustive minimum-cost bijection.

    Returns
    -------
    tuple
        ``perm[i]`` is the ground-truth index assigned to estimate ``i``.
    """
    if len(truth) != len(estimates):
        raise ValueError(f"length mismatch: {len(truth)} truths, {len(estimates)} estimates")
    k = len(truth)
    if k > max_k:
        raise ValueError(f"exhaustive matching limited to K <= {max_k}")
    cost = np.array([[_target_cost(t, e, t_s) for t in truth] for e in estimates])
    best, best_cost = None, np.inf
    for perm in permutations(range(k)):
        c = cost[np.arange(k), perm].sum()
        if c < best_cost:
            best, best_cost = perm, c
    return tuple(int(p) for p in best)


def spatial_vectors(factor, mode):
    """Per-target steering estimates from a factor matrix.

    ``mode="column"`` uses the factor columns directly (each is one steering
    vector up to scale after PARAFAC); ``mode="svd"`` uses the rank-K SVD
    vectors ``sqrt(sigma_k) u_k``. The SVD vectors are orthogonal mixtures of
    the steering vectors, so ``"svd"`` is only exact for a single target.
    """
    if mode == "column":
        return np.atleast_2d(factor)
    if mode == "svd":
        return extract_per_target(factor)
    raise ValueError(f"unknown extraction mode {mode!r}")


def frequencies_composite(p, n_y, n_z):
    """Frequencies of a product of two URA responses, kept unwrapped modulo 2 pi."""
    return esprit_2d_frequencies(p, n_y, n_z)


def refine_composite(n_y, n_z, freqs):
    return np.stack([ura_from_frequencies(n_y, n_z, mu, psi) for mu, psi in freqs], axis=1)
