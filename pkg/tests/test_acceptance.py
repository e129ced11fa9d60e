"""
Acceptance suite. Each test checks one criterion at its stated tolerance and
records a single PASS/FAIL line, printed again in the terminal summary.

The Monte Carlo criteria (2, 3, 4) are marked ``slow``; together they take
roughly half an hour on one core. Criterion 7 reuses their sweeps.
"""
import itertools

import numpy as np
import pytest

from tendae.cli import main as cli_main
from tendae.crlb import d_mean_signal, eta_from_scene, fd_mean_signal, fim, information_gram
from tendae.exceptions import IdentifiabilityError
from tendae.extraction import match_targets
from tendae.harness import (
    ExperimentConfig,
    check_identifiability,
    compare_architectures,
    run_sweep,
)
from tendae.ntfe import is_monotone
from tendae.pipeline import KnownSystem, TendaeOptions, parametric_signal, tendae
from tendae.scenario import DIAGONAL, ArrayGeometry, ScenarioConfig, build_scene, noise_variance
from tendae.tensor_core import fold, khatri_rao, kron, n_mode_product, rearrange, unfold, vec

TABLE = ScenarioConfig()  # N=16, L_ST=4, L_SR=16, Q=M=8, T=512, K=2
TIMING = ("tau", "nu", "alpha")
ANGLES = ("phi_sr", "theta_sr", "phi_ris_d", "theta_ris_d", "phi_ris_a", "theta_ris_a")
# a sampled ratio below one by more than this many standard errors counts as
# RMSE < CRLB; see the dominance note in test_c3
DOMINANCE_Z = 3.0


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# shared runs


@pytest.fixture(scope="module")
def noiseless_runs():
    cfg = ScenarioConfig(min_separation_deg=15.0)
    runs = []
    for seed in range(20):
        sc = build_scene(cfg, np.random.default_rng(seed))
        known = KnownSystem.from_scene(sc)
        rep = tendae(sc.y, known, cfg.k, TendaeOptions(seed=seed))
        rep.permutation = match_targets(sc.targets, rep.targets, cfg.t_s)
        runs.append((sc, known, rep))
    return runs


@pytest.fixture(scope="module")
def nmse_sweep():
    exp = ExperimentConfig(scenario=TABLE, snr_grid_db=(0.0, 10.0, 20.0, 30.0), trials=100,
                           estimators=("ls", "ksa", "tendae_als"), crlb=False)
    return run_sweep(exp)


@pytest.fixture(scope="module")
def crlb_sweep():
    exp = ExperimentConfig(scenario=ScenarioConfig(k=1), snr_grid_db=(20.0, 30.0), trials=500,
                           estimators=("tendae_als",), crlb=True)
    return run_sweep(exp, return_trials=True)


@pytest.fixture(scope="module")
def architecture_pair():
    exp = ExperimentConfig(scenario=TABLE, snr_grid_db=(20.0,), trials=100,
                           estimators=("tendae_als",), crlb=False)
    return compare_architectures(exp)


# ---------------------------------------------------------------------------


def _relative_errors(sc, rep):
    t_s = sc.config.t_s
    out = {}
    for tr, es in zip(sc.targets, rep.matched()):
        pairs = {
            "tau": (es.tau / t_s, tr.tau / t_s),
            "nu": (es.nu * t_s, tr.nu * t_s),
            "alpha": (es.alpha, tr.alpha),
            "phi_sr": (es.phi_sr, tr.phi_sr),
            "theta_sr": (es.theta_sr, tr.theta_sr),
            "phi_ris_d": (es.phi_ris_d, tr.phi_ris_d),
            "theta_ris_d": (es.theta_ris_d, tr.theta_ris_d),
        }
        for name, (e, t) in pairs.items():
            out[name] = max(out.get(name, 0.0), abs(e - t) / abs(t))
    out["phi_ris_a"] = abs(rep.phi_ris_a - sc.phi_ris_a) / sc.phi_ris_a
    out["theta_ris_a"] = abs(rep.theta_ris_a - sc.theta_ris_a) / sc.theta_ris_a
    return out


def test_c1_noiseless_exact_recovery(noiseless_runs, criterion):
    import time

    t0 = time.perf_counter()
    worst = {}
    for sc, _, rep in noiseless_runs:
        for name, err in _relative_errors(sc, rep).items():
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = worst[top] < 1e-6
    criterion(1, ok, f"20 scenes, worst relative error {worst[top]:.2e} ({top}) < 1e-6")
    assert ok, worst
    assert elapsed < 300


@pytest.mark.slow
def test_c2_channel_nmse_ordering(nmse_sweep, criterion):
    rep = nmse_sweep
    cells, ok = [], True
    for snr in (0.0, 10.0, 20.0, 30.0):
        t, k, ls = (rep.nmse(e, snr) for e in ("tendae_als", "ksa", "ls"))
        ok &= t <= k <= ls
        cells.append(f"{snr:g}dB {10 * np.log10(t):.1f}/{10 * np.log10(k):.1f}/{10 * np.log10(ls):.1f}")
    ok &= all(v == 0 for v in rep.failures.values())
    criterion(2, ok, "NMSE dB tendae/ksa/ls: " + ", ".join(cells))
    assert ok, rep.failures


@pytest.mark.slow
def test_c3_crlb_tracking_single_target(crlb_sweep, criterion):
    # Gaps use the per-scene normalized ratio sqrt(mean(err^2 / crlb^2)).
    # Dominance is a statement about the true RMSE: an efficient estimator
    # sits at ratio 1, so its 500-trial sample ratio falls below 1 about half
    # the time. A point fails dominance when the sampled squared ratio is
    # more than DOMINANCE_Z standard errors below one.
    rep, per_trial = crlb_sweep
    gaps, below, strict = {}, [], True
    for si, snr in enumerate((20.0, 30.0)):
        for g in TIMING + ANGLES:
            r = np.array([
                t[si].outcomes["tendae_als"].sq_errors[g] / t[si].crlb_sq[g]
                for t in per_trial
                if not t[si].outcomes["tendae_als"].failed and t[si].crlb_sq[g] > 0
            ])
            gaps[(snr, g)] = rep.gap_db("tendae_als", snr, g)
            strict &= r.mean() >= 1.0
            z = (r.mean() - 1.0) / (r.std(ddof=1) / np.sqrt(r.size))
            if z < -DOMINANCE_Z:
                below.append(f"{g}@{snr:g}dB z={z:.1f}")
    timing_ok = all(gaps[(s, g)] <= 3.0 for s in (20.0, 30.0) for g in TIMING)
    angle_ok = all(gaps[(s, g)] <= 13.0 for s in (20.0, 30.0) for g in ANGLES)
    failures = sum(rep.failures.values())
    ok = timing_ok and angle_ok and not below and failures == 0
    worst_t = max(gaps[(s, g)] for s in (20.0, 30.0) for g in TIMING)
    worst_a = max(gaps[(s, g)] for s in (20.0, 30.0) for g in ANGLES)
    criterion(3, ok, f"worst gap tau/nu/alpha {worst_t:.2f} dB (<= 3), angles {worst_a:.2f} dB (<= 13), "
                     f"significant RMSE<CRLB points {below or 'none'}, "
                     f"sample ratio >= 1 everywhere: {strict}, failures {failures}")
    for (snr, g), v in sorted(gaps.items()):
        print(f"  {g:>12} @ {snr:g} dB: gap {v:+.2f} dB")
    assert ok


@pytest.mark.slow
def test_c4_bd_versus_diagonal(architecture_pair, criterion):
    bd, dg = architecture_pair
    adv = {g: 20 * np.log10(dg.rmse("tendae_als", 20.0, g) / bd.rmse("tendae_als", 20.0, g))
           for g in ("tau", "nu")}
    no_ris = not any(g in dg.parameters() for g in ("phi_ris_d", "theta_ris_d", "phi_ris_a", "theta_ris_a"))
    ok = all(v >= 2.0 for v in adv.values()) and no_ris
    criterion(4, ok, f"BD advantage tau {adv['tau']:.2f} dB, nu {adv['nu']:.2f} dB (>= 2); "
                     f"diagonal RIS angles omitted: {no_ris}")
    assert ok


def test_c4_diagonal_emits_no_ris_angles():
    sc = build_scene(ScenarioConfig(ris_mode=DIAGONAL), np.random.default_rng(0))
    rep = tendae(sc.y, KnownSystem.from_scene(sc), 2)
    assert rep.phi_ris_a is None and rep.theta_ris_a is None
    assert all(t.phi_ris_d is None and t.theta_ris_d is None for t in rep.targets)


def test_c5_fim_correctness(criterion):
    worst_fd, sym_psd, exact_half = 0.0, True, True
    for seed in range(10):
        sc = build_scene(TABLE, np.random.default_rng(100 + seed))
        known = KnownSystem.from_scene(sc)
        eta = eta_from_scene(sc)
        for i in range(eta.size):
            a = d_mean_signal(eta, i, known)
            worst_fd = max(worst_fd, np.linalg.norm(a - fd_mean_signal(eta, i, known)) / np.linalg.norm(a))
        gram = information_gram(eta, known)
        s2 = noise_variance(sc.y0, 10.0)
        f1 = fim(eta, s2, known, gram=gram)
        f2 = fim(eta, 2 * s2, known, gram=gram)
        sym_psd &= f1.is_symmetric() and f1.is_psd()
        exact_half &= bool(np.array_equal(f2.matrix, f1.matrix / 2))
    ok = worst_fd < 1e-6 and sym_psd and exact_half
    criterion(5, ok, f"10 scenes, worst derivative mismatch {worst_fd:.1e} (< 1e-6), "
                     f"symmetric PSD {sym_psd}, F(2s2) == F(s2)/2 {exact_half}")
    assert ok


# ---------------------------------------------------------------------------
# loop oracles for criterion 6


def loop_unfold(t, mode):
    I, J, R = t.shape
    rows, cols = {1: (I, J * R), 2: (J, I * R), 3: (R, I * J)}[mode]
    out = np.zeros((rows, cols), complex)
    for i, j, r in itertools.product(range(I), range(J), range(R)):
        if mode == 1:
            out[i, j + r * J] = t[i, j, r]
        elif mode == 2:
            out[j, i + r * I] = t[i, j, r]
        else:
            out[r, i + j * I] = t[i, j, r]
    return out


def loop_nmode(t, a, mode):
    dims = list(t.shape)
    dims[mode - 1] = a.shape[0]
    out = np.zeros(dims, complex)
    for idx in itertools.product(*(range(d) for d in dims)):
        for s in range(t.shape[mode - 1]):
            src = list(idx)
            src[mode - 1] = s
            out[idx] += a[idx[mode - 1], s] * t[tuple(src)]
    return out


def loop_kron(a, b):
    (p, q), (r, s) = a.shape, b.shape
    out = np.zeros((p * r, q * s), complex)
    for i, j, k, l in itertools.product(range(p), range(q), range(r), range(s)):
        out[i * r + k, j * s + l] = a[i, j] * b[k, l]
    return out


def loop_khatri_rao(a, b):
    out = np.zeros((a.shape[0] * b.shape[0], a.shape[1]), complex)
    for c in range(a.shape[1]):
        for i, k in itertools.product(range(a.shape[0]), range(b.shape[0])):
            out[i * b.shape[0] + k, c] = a[i, c] * b[k, c]
    return out


def loop_rearrange(c, i1, j1, i2, j2):
    out = np.zeros((i2 * j2, i1 * j1), complex)
    for a, b in itertools.product(range(i1), range(j1)):
        block = c[a * i2:(a + 1) * i2, b * j2:(b + 1) * j2]
        out[:, a + b * i1] = block.reshape(-1, order="F")
    return out


def test_c6_kernel_oracles(criterion):
    rng = np.random.default_rng(6)
    worst = {}

    def note(name, x, y):
        err = np.max(np.abs(x - y)) / max(np.max(np.abs(y)), 1.0)
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(100):
        dims = tuple(rng.integers(1, 5, 3))
        t = crandn(rng, *dims)
        for mode in (1, 2, 3):
            m = unfold(t, mode)
            note("unfold", m, loop_unfold(t, mode))
            note("fold", fold(loop_unfold(t, mode), mode, dims), t)
            a = crandn(rng, int(rng.integers(1, 4)), dims[mode - 1])
            note("n_mode", n_mode_product(t, a, mode), loop_nmode(t, a, mode))
        a, b = crandn(rng, *rng.integers(1, 4, 2)), crandn(rng, *rng.integers(1, 4, 2))
        note("kron", kron(a, b), loop_kron(a, b))
        r = int(rng.integers(1, 4))
        a, b = crandn(rng, int(rng.integers(1, 4)), r), crandn(rng, int(rng.integers(1, 4)), r)
        note("khatri_rao", khatri_rao(a, b), loop_khatri_rao(a, b))
        i1, j1, i2, j2 = (int(v) for v in rng.integers(1, 4, 4))
        c = crandn(rng, i1 * i2, j1 * j2)
        note("rearrange", rearrange(c, i1, j1, i2, j2), loop_rearrange(c, i1, j1, i2, j2))

        # properties (1) to (5)
        u, v = crandn(rng, 3), crandn(rng, 4)
        note("prop1", vec(np.outer(u, v)), np.kron(v, u))
        A, B, C = crandn(rng, 3, 2), crandn(rng, 2, 4), crandn(rng, 4, 3)
        note("prop2", vec(A @ B @ C), np.kron(C.T, A) @ vec(B))
        bb = crandn(rng, 2)
        D = crandn(rng, 2, 3)
        note("prop3", vec(A @ np.diag(bb) @ D), khatri_rao(D.T, A) @ bb)
        A, B, C, D = crandn(rng, 2, 3), crandn(rng, 3, 2), crandn(rng, 3, 2), crandn(rng, 2, 4)
        note("prop4", kron(A, B) @ kron(C, D), kron(A @ C, B @ D))
        C, D = crandn(rng, 3, 2), crandn(rng, 2, 2)
        note("prop5", kron(A, B) @ khatri_rao(C, D), khatri_rao(A @ C, B @ D))

    top = max(worst, key=worst.get)
    ok = worst[top] <= 1e-12
    criterion(6, ok, f"100 instances per kernel and property, worst relative mismatch "
                     f"{worst[top]:.1e} ({top}) <= 1e-12")
    assert ok, worst


@pytest.mark.slow
def test_c7_als_contracts(noiseless_runs, nmse_sweep, crlb_sweep, architecture_pair, criterion):
    # every fit in criteria 1 to 4 is checked for a nonincreasing history
    nonmono = 0
    worst_rel = 0.0
    for sc, known, rep in noiseless_runs:
        d = rep.diagnostics
        hists = [d["angular_history"], d["bals_history"], d["inner_history"]]
        hists += [d[k] for k in ("weighted_ksa_history", "krsa_history") if k in d]
        nonmono += sum(not is_monotone(h) for h in hists)
        kf = d["ksa"]
        worst_rel = max(
            worst_rel,
            np.sqrt(d["angular_history"][-1]) / np.linalg.norm(kf.tensor_g),
            np.sqrt(d["bals_history"][-1]) / np.linalg.norm(kf.tensor_j),
            np.linalg.norm(parametric_signal(rep, known) - sc.y0) / np.linalg.norm(sc.y0),
        )
    reports = [nmse_sweep, crlb_sweep[0], *architecture_pair]
    nonmono += sum(r.nonmonotone_fits for r in reports)
    ok = nonmono == 0 and worst_rel < 1e-6
    criterion(7, ok, f"nonincreasing histories in criteria 1-4 ({nonmono} violations), "
                     f"noiseless worst relative residual {worst_rel:.1e} (< 1e-6)")
    assert ok


def test_c8_identifiability_guard(criterion):
    cases = [
        (dict(t=255), "T >= N^2"),
        (dict(m=1, q=2), "MQ >= L_ST"),
        (dict(k=5, m=2, q=2, st=ArrayGeometry(1, 1)), "MQ >= K"),
        (dict(k=3, sr=ArrayGeometry(1, 1), ris=ArrayGeometry(1, 2), t=4), "L_SR N >= K"),
    ]
    ok = True
    for kwargs, name in cases:
        try:
            build_scene(ScenarioConfig(**kwargs), np.random.default_rng(0))
            ok = False
        except IdentifiabilityError as exc:
            ok &= name in str(exc)
    ok &= check_identifiability(TABLE).ok
    criterion(8, ok, f"{len(cases)} violating configs rejected with the named inequality, default config passes")
    assert ok


def test_c9_sweep_determinism(tmp_path, criterion):
    args = ["sweep", "--trials", "2", "--snr", "10", "20", "--seed", "5",
            "--estimators", "ls", "ksa", "tendae_als", "tendae_hosvd"]
    codes = [cli_main(args + ["--out", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    b = (tmp_path / "b" / "sweep.csv").read_bytes()
    ok = codes == [0, 0] and a == b and len(a) > 0
    criterion(9, ok, f"two sweeps with seed 5, CSV byte-identical: {a == b} ({len(a)} bytes)")
    assert ok
