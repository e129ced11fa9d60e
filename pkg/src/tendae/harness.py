"""
Experiment harness: identifiability checks, Monte Carlo trials and sweeps,
BD versus diagonal comparisons, operation counts and CSV/JSON output.

Seeding
-------
Trial ``i`` of a sweep with master seed ``s`` uses the integer seed
``trial_seed(s, i)``. Within a trial, the scene, the noise realization and
the random initializations draw from independent child streams of that seed.
The scene stream is consumed in the same order for both RIS modes, so a BD
and a diagonal sweep with the same master seed see identical targets, and
the noise realization (before SNR scaling) is shared across the SNR grid.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .crlb import crlb as crlb_from_fim
from .crlb import block_slices, eta_from_scene, fim, information_gram
from .exceptions import IdentifiabilityError
from .extraction import match_targets
from .ksa import krsa_rank_k, ksa_reconstruct, ksa_rank_k, right_filter
from .ntfe import AlsOptions, is_monotone
from .pipeline import ESTIMATOR_OPTIONS, KnownSystem, TendaeOptions, parametric_signal, tendae
from .scenario import BD, DIAGONAL, ScenarioConfig, build_scene, noise_variance, synthesize
from .tensor_core import k_rank, K_RANK_MAX_COLS

ESTIMATORS = ("ls", "ksa", "tendae_als", "tendae_hosvd")
PARAMETRIC = ("tendae_als", "tendae_hosvd")
PARAM_GROUPS = (
    "tau", "nu", "alpha", "phi_sr", "theta_sr",
    "phi_ris_d", "theta_ris_d", "phi_ris_a", "theta_ris_a",
)
RIS_GROUPS = ("phi_ris_d", "theta_ris_d", "phi_ris_a", "theta_ris_a")
CSV_HEADER = ("estimator", "snr_db", "parameter", "statistic", "value")


def param_groups(mode):
    """Parameter groups reported for a RIS mode (diagonal omits RIS angles)."""
    return PARAM_GROUPS if mode == BD else tuple(g for g in PARAM_GROUPS if g not in RIS_GROUPS)


# ---------------------------------------------------------------------------
# identifiability


@dataclass
class Violation:
    inequality: str
    lhs: int
    rhs: int

    def __str__(self):
        return f"{self.inequality} violated: {self.lhs} < {self.rhs}"


@dataclass
class KruskalEntry:
    model: str
    rank: int
    k_ranks: tuple
    total: int
    required: int
    exact: bool  # False when some k-rank is an upper bound (too many columns)

    @property
    def unique(self):
        return self.total >= self.required


@dataclass
class IdentifiabilityReport:
    ok: bool
    violations: list
    kruskal: list = field(default_factory=list)
    stated_conditions: tuple = ("K >= 2", "K >= MQ + 1", "K >= 2")

    def lines(self):
        out = ["identifiable" if self.ok else "NOT identifiable"]
        out += [f"  {v}" for v in self.violations]
        for e in self.kruskal:
            tag = "" if e.exact else " (upper bound)"
            out.append(
                f"  kruskal {e.model}: sum k-rank {e.total}{tag} vs 2R+2 = {e.required}"
                f" -> {'unique' if e.unique else 'not guaranteed'}"
            )
        return out


def _inequalities(config: ScenarioConfig):
    n, k, mq, l_sr, l_st = config.n, config.k, config.mq, config.sr.n, config.st.n
    out = []
    if config.ris_mode == BD:
        out.append(("T >= N^2", config.t, n * n))
    else:
        out.append(("T >= N", config.t, n))
    out += [
        ("L_SR N >= K", l_sr * n, k),
        ("MQ >= L_ST", mq, l_st),
        ("MQ >= K", mq, k),
        ("L_SR N MQ N >= K", l_sr * n * mq * n, k),
    ]
    return out


def kruskal_sum(factors, tol=None):
    """``(sum of k-ranks, 2R + (N - 1))`` for PARAFAC factors of an order-N tensor."""
    r = factors[0].shape[1]
    kr = [k_rank(f) if tol is None else k_rank(f, tol) for f in factors]
    return sum(kr), 2 * r + len(factors) - 1


def kruskal_diagnostics(config: ScenarioConfig, seed=0):
    """Kruskal sums of the three PARAFAC models for a sample scene.

    Exact k-ranks are computed when a factor has at most
    ``K_RANK_MAX_COLS`` columns; otherwise the matrix rank is used as an upper
    bound.
    """
    from .scenario import delay_steering, doppler_steering, sample_targets, ura_steering

    rng = np.random.default_rng(seed)
    targets = sample_targets(config, rng)
    k = config.k
    a_sr = np.stack([ura_steering(config.sr, t.phi_sr, t.theta_sr) for t in targets], 1)
    b_tx = np.stack([ura_steering(config.ris, t.phi_ris_d, t.theta_ris_d) for t in targets], 1)
    c_tau = np.stack([delay_steering(t.tau, config.q, config.delta_f) for t in targets], 1)
    d_nu = np.stack([doppler_steering(t.nu, config.m, config.t_s) for t in targets], 1)
    eye = np.eye(k, dtype=complex)

    def entry(name, factors):
        r = factors[0].shape[1]
        exact = r <= K_RANK_MAX_COLS
        if exact:
            ks = tuple(k_rank(f) for f in factors)
        else:
            ks = tuple(int(np.linalg.matrix_rank(f)) for f in factors)
        return KruskalEntry(name, r, ks, sum(ks), 2 * r + len(factors) - 1, exact)

    mq = config.mq
    # nested model: rank MQ with factors I_MQ, HX (rank one) and F1^T
    hx = np.outer(np.ones(config.n), np.ones(mq))
    f1 = np.ones((k, mq), complex)
    return [
        entry("angular", [eye, a_sr, b_tx]),
        entry("nested", [np.eye(mq), hx, f1]),
        entry("delay-doppler", [eye, d_nu, c_tau]),
    ]


def check_identifiability(config: ScenarioConfig, raise_on_violation=True, kruskal=False):
    """Evaluate the dimension inequalities that make every LS step solvable.

    Parameters
    ----------
    raise_on_violation : bool
        Raise :class:`IdentifiabilityError` naming each binding inequality.
    kruskal : bool
        Attach Kruskal-sum diagnostics computed on a sample scene.

    Returns
    -------
    IdentifiabilityReport
    """
    violations = [Violation(name, lhs, rhs) for name, lhs, rhs in _inequalities(config) if lhs < rhs]
    report = IdentifiabilityReport(ok=not violations, violations=violations)
    if violations and raise_on_violation:
        raise IdentifiabilityError([str(v) for v in violations])
    if kruskal and not violations:
        report.kruskal = kruskal_diagnostics(config, seed=config.seed)
    return report


# ---------------------------------------------------------------------------
# trials


def trial_seed(master_seed, trial):
    """Integer seed of trial ``trial`` under ``master_seed``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _child_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


@dataclass
class EstimatorOutcome:
    """Result of one estimator on one noisy realization."""

    nmse: Optional[float] = None
    sq_errors: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""
    monotone: bool = True
    converged: bool = True
    final_residuals: dict = field(default_factory=dict)
    report: object = None
    matched: Optional[list] = None


@dataclass
class TrialResult:
    trial_seed: int
    snr_db: float
    targets: list
    outcomes: dict
    crlb_sq: Optional[dict] = None
    crlb_report: object = None


def nmse(estimate, truth):
    """``||estimate - truth||_F^2 / ||truth||_F^2``."""
    den = np.vdot(truth, truth).real
    diff = estimate - truth
    return float(np.vdot(diff, diff).real / den)


def squared_errors(scene, matched, mode):
    """Per-group squared errors summed over targets, delay in T_s and Doppler in 1/T_s."""
    t_s = scene.config.t_s
    out = {g: 0.0 for g in param_groups(mode)}
    for tr, es in zip(scene.targets, matched):
        out["tau"] += ((es.tau - tr.tau) / t_s) ** 2
        out["nu"] += ((es.nu - tr.nu) * t_s) ** 2
        out["alpha"] += abs(es.alpha - tr.alpha) ** 2
        out["phi_sr"] += (es.phi_sr - tr.phi_sr) ** 2
        out["theta_sr"] += (es.theta_sr - tr.theta_sr) ** 2
        if mode == BD:
            out["phi_ris_d"] += (es.phi_ris_d - tr.phi_ris_d) ** 2
            out["theta_ris_d"] += (es.theta_ris_d - tr.theta_ris_d) ** 2
    return out


def crlb_squared(report, t_s, mode):
    """Squared bounds aggregated over targets per group, matching :func:`squared_errors`."""
    k = (len(report.bounds) - 2) // 8
    sl = block_slices(k)
    b = report.bounds
    out = {
        "tau": float(np.sum((b[sl["tau"]] / t_s) ** 2)),
        "nu": float(np.sum((b[sl["nu"]] * t_s) ** 2)),
        "alpha": float(np.sum(b[sl["alpha_re"]] ** 2 + b[sl["alpha_im"]] ** 2)),
        "phi_sr": float(np.sum(b[sl["phi_sr"]] ** 2)),
        "theta_sr": float(np.sum(b[sl["theta_sr"]] ** 2)),
    }
    if mode == BD:
        out["phi_ris_d"] = float(np.sum(b[sl["phi_ris"]][1:] ** 2))
        out["theta_ris_d"] = float(np.sum(b[sl["theta_ris"]][1:] ** 2))
        out["phi_ris_a"] = float(b[sl["phi_ris"]][0] ** 2)
        out["theta_ris_a"] = float(b[sl["theta_ris"]][0] ** 2)
    return out


def _histories(report):
    d = report.diagnostics
    out = {
        "angular": d["angular_history"],
        "bals": d["bals_history"],
        "inner": d["inner_history"],
    }
    if "krsa_history" in d:
        out["krsa"] = d["krsa_history"]
    if "weighted_ksa_history" in d:
        out["weighted_ksa"] = d["weighted_ksa_history"]
    return out


def estimate_ls(scene, known=None):
    """Effective-channel LS reconstruction ``Y S^+ S``."""
    cfg = scene.config
    f = right_filter(scene.y, scene.s, cfg.ris_mode, cfg.sr.n, cfg.mq, cfg.n)
    return f.y_prime @ scene.s


def estimate_ksa(scene, k=None, seed=0):
    """Rank-K Kronecker-sum (BD) or Khatri-Rao-sum (diagonal) reconstruction."""
    cfg = scene.config
    k = cfg.k if k is None else k
    f = right_filter(scene.y, scene.s, cfg.ris_mode, cfg.sr.n, cfg.mq, cfg.n)
    if cfg.ris_mode == BD:
        y_prime = ksa_reconstruct(ksa_rank_k(f, k), cfg.sr.n, cfg.mq, cfg.n)
    else:
        kf = krsa_rank_k(f, k, AlsOptions(init="gevd", seed=seed))
        from .tensor_core import parafac_reconstruct

        t = parafac_reconstruct((kf.extras["a"], kf.extras["w"], kf.extras["p"]))
        y_prime = t.reshape(cfg.sr.n * cfg.mq, cfg.n, order="F")
    return y_prime @ scene.s


def _run_estimator(name, scene, known, seed):
    out = EstimatorOutcome()
    try:
        if name == "ls":
            out.nmse = nmse(estimate_ls(scene), scene.y0)
        elif name == "ksa":
            out.nmse = nmse(estimate_ksa(scene, seed=seed), scene.y0)
        elif name in PARAMETRIC:
            opts = TendaeOptions(seed=seed, **ESTIMATOR_OPTIONS[name])
            rep = tendae(scene.y, known, scene.config.k, opts)
            rep.permutation = match_targets(scene.targets, rep.targets, scene.config.t_s)
            matched = rep.matched()
            out.report = rep
            out.matched = matched
            out.nmse = nmse(parametric_signal(rep, known), scene.y0)
            out.sq_errors = squared_errors(scene, matched, scene.config.ris_mode)
            if scene.config.ris_mode == BD:
                out.sq_errors["phi_ris_a"] = (rep.phi_ris_a - scene.phi_ris_a) ** 2
                out.sq_errors["theta_ris_a"] = (rep.theta_ris_a - scene.theta_ris_a) ** 2
            hist = _histories(rep)
            out.monotone = all(is_monotone(h) for h in hist.values())
            out.final_residuals = {key: (h[-1] if h else 0.0) for key, h in hist.items()}
            out.converged = bool(rep.diagnostics["converged"])
        else:
            raise ValueError(f"unknown estimator {name!r}")
        if out.nmse is not None and not np.isfinite(out.nmse):
            raise FloatingPointError("non-finite NMSE")
    except Exception as exc:  # recorded as a failed trial, excluded from averages
        out.failed = True
        out.error = f"{type(exc).__name__}: {exc}"
        out.sq_errors = {}
    return out


def run_scene_trials(
    config: ScenarioConfig,
    snr_grid_db,
    seed,
    estimators=("ls", "ksa", "tendae_als"),
    with_crlb=False,
    keep_reports=False,
):
    """One scene, evaluated at every SNR of the grid.

    Returns
    -------
    list of TrialResult
        One entry per SNR, in grid order.
    """
    scene = build_scene(config, _child_rng(seed, 0))
    known = KnownSystem.from_scene(scene)
    init_seed = int(np.random.SeedSequence(seed, spawn_key=(2,)).generate_state(1)[0] >> 1)
    gram = None
    if with_crlb:
        eta = eta_from_scene(scene)
        gram = information_gram(eta, known)
    results = []
    for snr_db in snr_grid_db:
        noisy = synthesize(scene, float(snr_db), _child_rng(seed, 1))
        outcomes = {name: _run_estimator(name, noisy, known, init_seed) for name in estimators}
        if not keep_reports:
            for o in outcomes.values():
                o.report = None
        res = TrialResult(seed, float(snr_db), list(scene.targets), outcomes)
        if gram is not None and np.isfinite(snr_db):
            sigma2 = noise_variance(scene.y0, snr_db)
            rep = crlb_from_fim(fim(eta, sigma2, known, gram=gram), t_s=config.t_s, eta=eta)
            res.crlb_sq = crlb_squared(rep, config.t_s, config.ris_mode)
            if keep_reports:
                res.crlb_report = rep
        results.append(res)
    return results


def run_trial(config: ScenarioConfig, snr_db, trial_seed_value, estimators=ESTIMATORS, with_crlb=False,
              keep_reports=True):
    """Run every requested estimator on one freshly drawn scene at one SNR.

    Deterministic in ``(config, snr_db, trial_seed_value)``. Estimator errors
    are captured as failed outcomes rather than raised.
    """
    check_identifiability(config)
    return run_scene_trials(config, [snr_db], trial_seed_value, estimators, with_crlb, keep_reports)[0]


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class ExperimentConfig:
    """A Monte Carlo experiment: scenario, SNR grid, trial count and estimators."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    snr_grid_db: tuple = (0.0, 10.0, 20.0, 30.0)
    trials: int = 100
    estimators: tuple = ("ls", "ksa", "tendae_als")
    outputs: str = "results"
    master_seed: int = 0
    workers: int = 1
    crlb: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ValueError("SNR grid must be nonempty")
        if not self.estimators:
            raise ValueError("estimator set must be nonempty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        self.snr_grid_db = tuple(float(s) for s in self.snr_grid_db)
        self.estimators = tuple(self.estimators)

    def to_dict(self):
        return {
            "scenario": self.scenario.to_dict(),
            "snr_grid_db": list(self.snr_grid_db),
            "trials": self.trials,
            "estimators": list(self.estimators),
            "outputs": self.outputs,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "crlb": self.crlb,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scen = d.pop("scenario", {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(scenario=ScenarioConfig.from_dict(scen), **d)


def load_experiment(path):
    """Read an :class:`ExperimentConfig` from a JSON file."""
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass
class MetricReport:
    """Aggregated sweep metrics.

    ``rows`` are ``(estimator, snr_db, parameter, statistic, value)`` tuples in
    a fixed order. CRLB references use the estimator name ``"crlb"``.
    """

    rows: list
    trials: int
    failures: dict
    wall_clock_s: float
    ris_mode: str
    nonmonotone_fits: int = 0
    unconverged_fits: int = 0
    notes: list = field(default_factory=list)

    def value(self, estimator, snr_db, parameter, statistic):
        for r in self.rows:
            if r[0] == estimator and r[1] == float(snr_db) and r[2] == parameter and r[3] == statistic:
                return r[4]
        raise KeyError((estimator, snr_db, parameter, statistic))

    def rmse(self, estimator, snr_db, parameter):
        return self.value(estimator, snr_db, parameter, "rmse")

    def nmse(self, estimator, snr_db):
        return self.value(estimator, snr_db, "channel", "nmse")

    def crlb(self, snr_db, parameter):
        return self.value("crlb", snr_db, parameter, "bound")

    def crlb_ratio(self, estimator, snr_db, parameter):
        """``sqrt(mean(err^2 / CRLB^2))`` with each trial's error scaled by its own scene's bound."""
        return self.value(estimator, snr_db, parameter, "crlb_ratio")

    def gap_db(self, estimator, snr_db, parameter):
        """RMSE-to-CRLB gap in dB from :meth:`crlb_ratio`."""
        return float(20 * np.log10(self.crlb_ratio(estimator, snr_db, parameter)))

    def parameters(self):
        return sorted({r[2] for r in self.rows if r[3] == "rmse"}, key=PARAM_GROUPS.index)

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for est, snr, par, stat, val in self.rows:
            w.writerow([est, repr(float(snr)), par, stat, repr(float(val))])
        return buf.getvalue()


def _sweep_job(args):
    config, snrs, seed, estimators, with_crlb = args
    return run_scene_trials(config, snrs, seed, estimators, with_crlb)


def _execute(jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_job, jobs, chunksize=1))
    return [_sweep_job(j) for j in jobs]


def aggregate(per_trial, snr_grid, estimators, mode, with_crlb, wall_clock=0.0):
    """Reduce per-trial results (list over trials of lists over SNR) in trial order."""
    rows = []
    failures = {}
    nonmono = unconv = 0
    groups = param_groups(mode)
    for si, snr in enumerate(snr_grid):
        for est in estimators:
            outs = [trial[si].outcomes[est] for trial in per_trial]
            good = [o for o in outs if not o.failed]
            failures[f"{est}@{snr!r}"] = len(outs) - len(good)
            nonmono += sum(not o.monotone for o in good)
            unconv += sum(not o.converged for o in good)
            mean_nmse = float(np.mean([o.nmse for o in good])) if good else float("nan")
            rows.append((est, snr, "channel", "nmse", mean_nmse))
            if est in PARAMETRIC:
                for g in groups:
                    vals = [o.sq_errors[g] for o in good]
                    rmse = float(np.sqrt(np.mean(vals))) if vals else float("nan")
                    rows.append((est, snr, g, "rmse", rmse))
                if with_crlb and np.isfinite(snr):
                    # each error against its own scene's bound
                    for g in groups:
                        ratios = [
                            trial[si].outcomes[est].sq_errors[g] / trial[si].crlb_sq[g]
                            for trial in per_trial
                            if not trial[si].outcomes[est].failed and trial[si].crlb_sq[g] > 0
                        ]
                        val = float(np.sqrt(np.mean(ratios))) if ratios else float("nan")
                        rows.append((est, snr, g, "crlb_ratio", val))
            rows.append((est, snr, "-", "successes", float(len(good))))
            rows.append((est, snr, "-", "failures", float(len(outs) - len(good))))
        if with_crlb and np.isfinite(snr):
            for g in groups:
                vals = [trial[si].crlb_sq[g] for trial in per_trial]
                rows.append(("crlb", snr, g, "bound", float(np.sqrt(np.mean(vals)))))
    notes = []
    if mode == DIAGONAL:
        notes.append("diagonal RIS: arrival and departure angles at the RIS are not separately identifiable")
    return MetricReport(rows, len(per_trial), failures, wall_clock, mode, nonmono, unconv, notes)


def run_sweep(exp: ExperimentConfig, return_trials=False):
    """Monte Carlo sweep over ``exp.snr_grid_db`` with ``exp.trials`` scenes.

    Returns
    -------
    MetricReport, or ``(MetricReport, per_trial)`` when ``return_trials``.
    """
    cfg = exp.scenario
    check_identifiability(cfg)
    t0 = time.perf_counter()
    jobs = [
        (cfg, exp.snr_grid_db, trial_seed(exp.master_seed, i), exp.estimators, exp.crlb)
        for i in range(exp.trials)
    ]
    per_trial = _execute(jobs, exp.workers)
    report = aggregate(
        per_trial, exp.snr_grid_db, exp.estimators, cfg.ris_mode, exp.crlb, time.perf_counter() - t0
    )
    return (report, per_trial) if return_trials else report


def compare_architectures(exp: ExperimentConfig, return_trials=False):
    """Run the same experiment for a BD and a diagonal RIS with paired scenes.

    Returns
    -------
    (MetricReport, MetricReport)
        BD first. With ``return_trials`` the per-trial results follow.
    """
    bd = replace(exp, scenario=replace(exp.scenario, ris_mode=BD))
    dg = replace(exp, scenario=replace(exp.scenario, ris_mode=DIAGONAL))
    check_identifiability(bd.scenario)
    check_identifiability(dg.scenario)
    r_bd = run_sweep(bd, return_trials)
    r_dg = run_sweep(dg, return_trials)
    if return_trials:
        return r_bd[0], r_dg[0], r_bd[1], r_dg[1]
    return r_bd, r_dg


# ---------------------------------------------------------------------------
# operation counts


def complexity_estimate(config: ScenarioConfig, estimator, als_iter=10):
    """Dominant operation counts from the closed-form cost expressions.

    Returns
    -------
    dict
        Named components and their ``total``. ``tendae_*`` totals include the
        KSA (or KRSA) stage and the gain pseudo-inverse.
    """
    l_sr, l_st, n, k = config.sr.n, config.st.n, config.n, config.k
    m, q, t = config.m, config.q, config.t
    mq = m * q
    it = als_iter
    ls = n**4 * t
    ksa = l_sr * mq * n**2 * k
    krsa = l_sr * mq * n * k
    gains = l_sr * mq * n**2 * k
    ntfe1_hosvd = l_sr * n * k * (l_sr + n + k)
    ntfe2_hosvd = mq * n * k * (mq + n + k) + 3 * mq * k**2
    ntfe1_als = (
        (l_sr**2 * n / k + l_sr + n) * k**2 * it
        + 2 * (l_sr + n) * k
        + (5 * l_sr + 3 * n + 1) * k**2
        + 6 * k**3
    )
    ntfe2_als = (
        ((mq * n + k**2 * l_st) * mq + (mq / k + m + q) * k**3) * it
        + (3 + 2 * l_st) * n
        + (m + n + q + 1) * k
        + 3 * (m + q) * k**2
        + 6 * k**3
    )
    stage1 = ksa if config.ris_mode == BD else krsa
    if estimator == "ls":
        parts = {"ls": ls}
    elif estimator == "ksa":
        parts = {"ksa": stage1} if config.ris_mode == BD else {"krsa": stage1}
    elif estimator == "tendae_als":
        parts = {"stage1": stage1, "ntfe1": ntfe1_als, "ntfe2": ntfe2_als, "gains": gains}
    elif estimator == "tendae_hosvd":
        parts = {"stage1": stage1, "ntfe1": ntfe1_hosvd, "ntfe2": ntfe2_hosvd, "gains": gains}
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    parts = {key: float(v) for key, v in parts.items()}
    parts["total"] = float(sum(parts.values()))
    return parts


# ---------------------------------------------------------------------------
# output


def code_version():
    """``git describe`` of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def write_outputs(report: MetricReport, exp: ExperimentConfig, out_dir, stem="sweep"):
    """Write ``<stem>.csv`` and ``<stem>.json`` into ``out_dir``.

    The CSV depends only on the configuration and seed. Timing and code
    version go to the JSON manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    text = report.csv_text()
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(text)
    manifest = {
        "config": exp.to_dict(),
        "master_seed": exp.master_seed,
        "code_version": code_version(),
        "trials": report.trials,
        "failures": report.failures,
        "nonmonotone_fits": report.nonmonotone_fits,
        "unconverged_fits": report.unconverged_fits,
        "ris_mode": report.ris_mode,
        "notes": report.notes,
        "wall_clock_s": report.wall_clock_s,
        "csv_sha256": hashlib.sha256(text.encode()).hexdigest(),
    }
    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return csv_path, json_path
