"""
End-to-end two-stage estimator.

Stage one removes the RIS schedule and computes the rank-K Kronecker-sum
(BD RIS) or Khatri-Rao-sum (diagonal RIS) approximation. Stage two fits the
angular and the nested delay-Doppler tensors independently, extracts the
parameters, pairs the two branches and recovers the gains in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .extraction import (
    EstimateReport,
    TargetEstimate,
    angles_from_frequencies,
    delay_from_frequency,
    doppler_from_frequency,
    esprit_1d,
    esprit_1d_multilag,
    esprit_2d_frequencies,
    estimate_gains,
    estimate_gains_weighted,
    gain_designs,
    pair_branches,
    refine_composite,
    spatial_vectors,
)
from .ksa import krsa_rank_k, ksa_rank_k, ksa_weighted, right_filter, schedule_metric
from .ntfe import AlsOptions, fit_angular, fit_nested
from .scenario import (
    BD,
    C0,
    DIAGONAL,
    Scene,
    ScenarioConfig,
    delay_steering,
    doppler_steering,
    noiseless_signal,
    ura_from_frequencies,
)
from .tensor_core import khatri_rao, parafac_reconstruct


@dataclass
class KnownSystem:
    """Everything the receiver knows: geometry, pilots, RIS schedule, ST angles."""

    config: ScenarioConfig
    x: np.ndarray
    s: np.ndarray
    ris_slots: np.ndarray
    a_st: np.ndarray

    @classmethod
    def from_scene(cls, scene: Scene) -> "KnownSystem":
        return cls(scene.config, scene.x, scene.s, scene.ris_slots, scene.a_st)


@dataclass
class TendaeOptions:
    """Estimator settings.

    ``init`` applies to the angular fit, the KRSA fit and the bilinear loop of
    the nested fit; the inner delay-Doppler loop uses ``inner_init``.
    ``extraction`` is ``"column"`` (ESPRIT on each fitted factor column) or
    ``"svd"`` (ESPRIT on the rank-K SVD vectors of each factor).
    ``frequency`` selects the delay/Doppler estimator: ``"multilag"`` uses
    every shift with weights from the pilot profile and the configured
    delay/Doppler bounds; ``"ls"`` is the single-shift LS ratio.
    ``weighted`` refines the BD subspace fit and solves for the gains in the
    metric ``S S^H`` of the RIS schedule, which accounts for the noise
    coloring of the right filter; otherwise both use the filtered domain
    unweighted.
    ``restarts`` bounds the number of starts of the angular fit; extra
    random starts are only drawn when a fit stops at ``max_iter``.
    """

    init: str = "random"
    inner_init: str = "subspace"
    max_iter: int = 500
    tol: float = 1e-6
    seed: int = 0
    extraction: str = "column"
    clip: bool = True
    frequency: str = "multilag"
    weighted: bool = True
    restarts: int = 3

    def als(self, init=None, seed_offset=0):
        return AlsOptions(self.max_iter, self.tol, init or self.init, self.seed + seed_offset)


ESTIMATOR_OPTIONS = {
    "tendae_als": dict(init="random"),
    "tendae_hosvd": dict(init="hosvd"),
}


def frequency_bounds(cfg: ScenarioConfig):
    """Largest delay and Doppler phase steps (rad/sample) the configuration allows."""
    tau_max = 3 * cfg.distance_range[1] / C0
    nu_max = 2 * cfg.max_speed / cfg.wavelength
    w_tau = min(np.pi, 2 * np.pi * cfg.delta_f * tau_max)
    w_nu = min(np.pi, 2 * np.pi * cfg.t_s * nu_max)
    return w_tau, w_nu


def pilot_profiles(ax, m, q):
    """Per-subcarrier and per-symbol amplitude of ``a_st^T X`` (column ``q*M + m``)."""
    w = np.abs(np.asarray(ax)).reshape(q, m)
    return np.sqrt(np.sum(w**2, axis=1)), np.sqrt(np.sum(w**2, axis=0))


def _angles(vectors, geom, clip, counter):
    out, freqs = [], []
    for r in range(vectors.shape[1]):
        mu, psi = esprit_2d_frequencies(vectors[:, r], geom.n_y, geom.n_z)
        phi, theta, clipped = angles_from_frequencies(mu, psi, clip=clip)
        counter["clipped"] += int(clipped)
        out.append((phi, theta))
        freqs.append((mu, psi))
    return out, freqs


def _delay_doppler(c_vec, d_vec, cfg, ax, frequency):
    k = c_vec.shape[1]
    if frequency == "multilag":
        w_tau, w_nu = frequency_bounds(cfg)
        prof_q, prof_m = pilot_profiles(ax, cfg.m, cfg.q)
        om_tau = [esprit_1d_multilag(c_vec[:, r], prof_q, w_tau) for r in range(k)]
        om_nu = [esprit_1d_multilag(d_vec[:, r], prof_m, w_nu) for r in range(k)]
    elif frequency == "ls":
        om_tau = [esprit_1d(c_vec[:, r]) for r in range(k)]
        om_nu = [esprit_1d(d_vec[:, r]) for r in range(k)]
    else:
        raise ValueError(f"unknown frequency estimator {frequency!r}")
    taus = [delay_from_frequency(w, cfg.delta_f) for w in om_tau]
    nus = [doppler_from_frequency(w, cfg.t_s) for w in om_nu]
    return taus, nus


def weighted_rank1(z, w, max_iter=200, tol=1e-14):
    """Rank-one ``c d^T`` minimizing ``||z - w * (c d^T)||_F`` (elementwise weight ``w``).

    Returns ``(c, d)`` up to a shared scale.
    """
    z = np.asarray(z, complex)
    w = np.asarray(w, complex)
    aw = np.abs(w) ** 2
    f0 = z * np.conj(w) / (aw + 1e-2 * aw.max())
    u, sv, vh = np.linalg.svd(f0)
    c, d = u[:, 0] * sv[0], vh[0]
    prev = np.inf
    for _ in range(max_iter):
        wc = w * c[:, None]
        d = np.sum(np.conj(wc) * z, axis=0) / np.maximum(np.sum(np.abs(wc) ** 2, axis=0), 1e-300)
        wd = w * d[None, :]
        c = np.sum(np.conj(wd) * z, axis=1) / np.maximum(np.sum(np.abs(wd) ** 2, axis=1), 1e-300)
        cost = np.linalg.norm(z - w * np.outer(c, d)) ** 2
        if np.isfinite(prev) and prev - cost <= tol * prev:
            break
        prev = cost
    return c, d


def unmix_delay_doppler(r_y, g_bar, b_rx, ax, m, q, bd=True):
    """Per-target delay and Doppler vectors through the angular factor.

    ``r_y ~ g_bar diag(alpha) j_bar``; a least-squares solve against the
    estimated ``g_bar`` gives each target's row of ``j_bar`` separately,
    whose delay-Doppler part is a weighted rank-one ``Q x M`` matrix.

    Returns
    -------
    c : ndarray, Q x K
    d : ndarray, M x K
    """
    rows = np.linalg.lstsq(g_bar, r_y, rcond=None)[0]
    mq = m * q
    k = g_bar.shape[1]
    c_out = np.empty((q, k), complex)
    d_out = np.empty((m, k), complex)
    weight = np.asarray(ax).reshape(q, m)
    for r in range(k):
        if bd:
            jt = rows[r].reshape(mq, -1, order="F")  # J_r^T = (ax * f_r) b_rx^T
            v = jt @ np.conj(b_rx) / np.vdot(b_rx, b_rx).real
        else:
            v = rows[r]
        c_out[:, r], d_out[:, r] = weighted_rank1(v.reshape(q, m), weight)
    return c_out, d_out


def tendae(y, known: KnownSystem, k: int, opts: Optional[TendaeOptions] = None) -> EstimateReport:
    """Run the full estimator on a received signal.

    Parameters
    ----------
    y : ndarray, (L_SR MQ) x T
    known : KnownSystem
    k : int
        Number of targets.

    Returns
    -------
    EstimateReport
        ``diagnostics`` carries the fit histories, the estimated channels
        (``g``, ``j``) and the rank-K filtered-domain reconstruction.
    """
    opts = opts or TendaeOptions()
    cfg = known.config
    l_sr, mq, n = cfg.sr.n, cfg.mq, cfg.n
    mode = cfg.ris_mode
    counter = {"clipped": 0}

    f = right_filter(y, known.s, mode, l_sr, mq, n)
    if mode == BD:
        kf = ksa_rank_k(f, k)
        if opts.weighted:
            kf = ksa_weighted(f, known.s, k, init=kf)
    else:
        kf = krsa_rank_k(f, k, opts.als(init="gevd", seed_offset=3))
    ang_init = opts.init if mode == BD else "gevd"
    ang = fit_angular(kf.tensor_g, k, opts.als(init=ang_init, seed_offset=1), restarts=opts.restarts)
    dd = fit_nested(
        kf.tensor_j,
        known.x,
        k,
        opts.als(seed_offset=2),
        m=cfg.m,
        q=cfg.q,
        opts_inner=opts.als(init=opts.inner_init, seed_offset=4),
        a_st=known.a_st,
    )

    # manifolds are rebuilt from the spatial frequencies so that clipping an
    # angle into its branch never perturbs the steering vectors
    sr_angles, sr_freqs = _angles(spatial_vectors(ang.a_sr, opts.extraction), cfg.sr, opts.clip, counter)
    a_hat = refine_composite(cfg.sr.n_y, cfg.sr.n_z, sr_freqs)
    tx_vectors = spatial_vectors(ang.b_tx, opts.extraction)
    if mode == BD:
        ris_d, tx_freqs = _angles(tx_vectors, cfg.ris, opts.clip, counter)
        b_hat = refine_composite(cfg.ris.n_y, cfg.ris.n_z, tx_freqs)
        u = np.linalg.svd(dd.h_hat)[0][:, 0]
        (ris_a,), (rx_freq,) = _angles(u[:, None], cfg.ris, opts.clip, counter)
        b_rx = ura_from_frequencies(cfg.ris.n_y, cfg.ris.n_z, *rx_freq)
    else:
        # only b_tx * b_rx is observable; refine it from its composite frequencies
        ris_d = [(None, None)] * k
        freqs = [esprit_2d_frequencies(tx_vectors[:, r], cfg.ris.n_y, cfg.ris.n_z) for r in range(k)]
        b_hat = np.stack([ura_from_frequencies(cfg.ris.n_y, cfg.ris.n_z, *fr) for fr in freqs], 1)
        ris_a = (None, None)
        b_rx = np.ones(n, complex)

    ax = known.a_st @ known.x
    hx = np.outer(b_rx, known.a_st) @ known.x  # N x MQ
    g_bar = khatri_rao(b_hat, a_hat)  # columns vec(G_k) / alpha_k
    if mode == BD:
        r_y = kf.truncation()
    else:
        a, w, p = kf.extras["a"], kf.extras["w"], kf.extras["p"]
        t_hat = parafac_reconstruct((a, w, p))  # L_SR x MQ x N
        r_y = t_hat.transpose(0, 2, 1).reshape(l_sr * n, mq, order="F")
    metric = schedule_metric(known.s) if opts.weighted else None

    def candidate(c_vec, d_vec, pair):
        taus, nus = _delay_doppler(c_vec, d_vec, cfg, ax, opts.frequency)
        fd = np.stack(
            [np.kron(delay_steering(t, cfg.q, cfg.delta_f), doppler_steering(v, cfg.m, cfg.t_s))
             for t, v in zip(taus, nus)],
            axis=1,
        )
        if mode == BD:
            # rows vec(J_k^T)^T = (((HX) kr I) f_k)^T, index c + n*MQ
            j_bar = (hx.T[None, :, :] * fd.T[:, :, None]).transpose(0, 2, 1).reshape(k, n * mq)
        else:
            j_bar = (fd * ax[:, None]).T  # rows w_k^T
        perm = list(range(k))
        if pair:
            perm, _ = pair_branches(g_bar, j_bar, r_y)
        j_bar = j_bar[perm]
        if metric is not None:
            designs = gain_designs(g_bar, j_bar, l_sr, mq, n, bd=mode == BD)
            alpha = estimate_gains_weighted(f.y_prime, designs, metric)
            e = sum(al * d for al, d in zip(alpha, designs)) - f.y_prime
            cost = float(np.real(np.vdot(e, e @ metric)))
        else:
            alpha = estimate_gains(r_y, g_bar, j_bar)
            cost = float(np.linalg.norm(r_y - (g_bar * alpha) @ j_bar) ** 2)
        return dict(taus=[taus[i] for i in perm], nus=[nus[i] for i in perm],
                    fd=fd[:, perm], j_bar=j_bar, alpha=alpha, cost=cost, pairing=perm)

    nested = candidate(
        spatial_vectors(dd.c_tau, opts.extraction), spatial_vectors(dd.d_nu, opts.extraction), True
    )
    # the angular fit separates targets whose delays or Dopplers nearly
    # coincide, where the delay-Doppler factorization is close to degenerate
    c_un, d_un = unmix_delay_doppler(r_y, g_bar, b_rx, ax, cfg.m, cfg.q, bd=mode == BD)
    unmixed = candidate(c_un, d_un, False)
    best = unmixed if unmixed["cost"] < nested["cost"] else nested
    taus, nus, fd, j_bar, alpha = (best[key] for key in ("taus", "nus", "fd", "j_bar", "alpha"))
    perm = best["pairing"]

    targets = [
        TargetEstimate(
            phi_sr=sr_angles[r][0],
            theta_sr=sr_angles[r][1],
            phi_ris_d=ris_d[r][0],
            theta_ris_d=ris_d[r][1],
            tau=float(taus[r]),
            nu=float(nus[r]),
            alpha=complex(alpha[r]),
        )
        for r in range(k)
    ]
    g_est = [alpha[r] * np.outer(a_hat[:, r], b_hat[:, r]) for r in range(k)]
    if mode == BD:
        j_est = [hx * fd[:, r][None, :] for r in range(k)]
    else:
        j_est = [np.ones((n, 1)) * j_bar[r][None, :] for r in range(k)]
    diagnostics = {
        "ksa_singular_values": kf.singular_values,
        "angular_history": ang.residual_history,
        "angular_iterations": ang.iterations,
        "bals_history": dd.bals_history,
        "inner_history": dd.als_history,
        "bals_iterations": dd.bals_iterations,
        "inner_iterations": dd.als_iterations,
        "converged": bool(ang.converged and dd.bals_converged and dd.als_converged),
        "clipped": counter["clipped"],
        "pairing": perm,
        "delay_doppler_source": "unmixed" if best is unmixed else "nested",
        "g": g_est,
        "j": j_est,
        "ksa": kf,
    }
    if "cost_history" in kf.extras:
        diagnostics["weighted_ksa_history"] = kf.extras["cost_history"]
    if mode == DIAGONAL:
        diagnostics["krsa_history"] = kf.extras["fit"].residual_history
    return EstimateReport(
        targets=targets,
        phi_ris_a=ris_a[0],
        theta_ris_a=ris_a[1],
        diagnostics=diagnostics,
    )


def parametric_signal(report: EstimateReport, known: KnownSystem):
    """Noiseless received signal implied by the estimated channels."""
    return noiseless_signal(
        report.diagnostics["g"], report.diagnostics["j"], known.ris_slots, known.config.ris_mode
    )
