import io

import numpy as np
import pytest

from tendae.crlb import (
    FimMatrix,
    block_slices,
    crlb,
    crlb_for_scene,
    d_mean_signal,
    d_steering,
    eta_from_scene,
    fd_mean_signal,
    fim,
    information_gram,
    mean_signal,
    pack_eta,
    param_layout,
    unpack_eta,
    write_crlb_csv,
)
from tendae.exceptions import DimensionError
from tendae.pipeline import KnownSystem
from tendae.scenario import DIAGONAL, ArrayGeometry, ScenarioConfig, build_scene, synthesize, ura_steering

SMALL = ScenarioConfig(
    st=ArrayGeometry(2, 1), ris=ArrayGeometry(2, 2), sr=ArrayGeometry(2, 2), k=2, m=2, q=2, t=20
)


@pytest.fixture(scope="module")
def small():
    sc = build_scene(SMALL, np.random.default_rng(0))
    return sc, KnownSystem.from_scene(sc), eta_from_scene(sc)


def test_layout_and_slices():
    names = param_layout(2)
    assert len(names) == 18
    assert names[:2] == ["alpha_re[0]", "alpha_re[1]"]
    assert names[12:15] == ["phi_ris[a]", "phi_ris[d0]", "phi_ris[d1]"]
    sl = block_slices(2)
    assert [names[i] for i in range(18)[sl["nu"]]] == ["nu[0]", "nu[1]"]


def test_pack_unpack_roundtrip(small):
    sc, _, eta = small
    targets, pa, ta = unpack_eta(eta)
    assert targets == sc.targets
    assert (pa, ta) == (sc.phi_ris_a, sc.theta_ris_a)
    np.testing.assert_array_equal(pack_eta(targets, pa, ta), eta)
    with pytest.raises(DimensionError):
        unpack_eta(np.zeros(7))


def test_mean_signal_is_noiseless_signal(small):
    sc, known, eta = small
    np.testing.assert_allclose(mean_signal(eta, known), sc.y0, atol=1e-12 * np.abs(sc.y0).max())


@pytest.mark.parametrize("wrt", ["phi", "theta"])
def test_d_steering_matches_finite_difference(wrt):
    geom, phi, theta, h = ArrayGeometry(3, 4), 0.6, 0.9, 1e-6
    if wrt == "phi":
        fd = (ura_steering(geom, phi + h, theta) - ura_steering(geom, phi - h, theta)) / (2 * h)
    else:
        fd = (ura_steering(geom, phi, theta + h) - ura_steering(geom, phi, theta - h)) / (2 * h)
    np.testing.assert_allclose(d_steering(phi, theta, geom, wrt), fd, atol=1e-8)
    with pytest.raises(ValueError):
        d_steering(phi, theta, geom, "psi")


def test_derivatives_match_finite_differences(small):
    _, known, eta = small
    for i in range(eta.size):
        a = d_mean_signal(eta, i, known)
        f = fd_mean_signal(eta, i, known)
        assert np.linalg.norm(a - f) <= 1e-6 * np.linalg.norm(a)


def test_gram_matches_data_domain_jacobian(small):
    # brute force: stack every full-size derivative and form Re(D^H D)
    _, known, eta = small
    d = np.stack([d_mean_signal(eta, i, known).ravel() for i in range(eta.size)], 1)
    brute = (d.conj().T @ d).real
    np.testing.assert_allclose(information_gram(eta, known), brute, rtol=1e-10, atol=1e-12 * brute.max())


def test_fim_properties(small):
    sc, known, eta = small
    f1 = fim(eta, 1e-22, known)
    f2 = fim(eta, 2e-22, known)
    assert f1.is_symmetric() and f1.is_psd()
    assert np.array_equal(f2.matrix, f1.matrix / 2)
    with pytest.raises(ValueError):
        fim(eta, 0.0, known)


def test_bounds_scale_with_noise(small):
    _, known, eta = small
    gram = information_gram(eta, known)
    b1 = crlb(fim(eta, 1e-22, known, gram=gram)).bounds
    b2 = crlb(fim(eta, 4e-22, known, gram=gram)).bounds
    np.testing.assert_allclose(b2, 2 * b1, rtol=1e-9)


def test_crlb_matches_plain_inverse_when_well_conditioned():
    m = np.array([[4.0, 1.0], [1.0, 3.0]])
    rep = crlb(FimMatrix(m, 1.0, ["a", "b"]))
    np.testing.assert_allclose(rep.bounds, np.sqrt(np.diag(np.linalg.inv(m))))
    assert not rep.singular and rep.unidentifiable == []


def test_singular_fim_is_flagged():
    m = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    rep = crlb(FimMatrix(m, 1.0, ["a", "b", "c"]))
    assert rep.singular
    assert rep.unidentifiable == ["a", "b"]
    assert rep.bounds[2] == pytest.approx(np.sqrt(0.5))


def test_diagonal_ris_angles_not_separately_identifiable():
    cfg = ScenarioConfig(st=SMALL.st, ris=SMALL.ris, sr=SMALL.sr, k=1, m=2, q=2, t=20,
                         ris_mode=DIAGONAL)
    sc = synthesize(build_scene(cfg, np.random.default_rng(1)), 20.0, np.random.default_rng(2))
    rep = crlb_for_scene(sc)
    assert rep.singular
    assert any(n.startswith("phi_ris") or n.startswith("theta_ris") for n in rep.unidentifiable)


def test_normalized_bounds_and_csv(small):
    sc, known, _ = small
    noisy = synthesize(sc, 10.0, np.random.default_rng(3))
    rep = crlb_for_scene(noisy, known=known)
    t_s = SMALL.t_s
    np.testing.assert_allclose(rep.block("tau", normalized=True), rep.block("tau") / t_s)
    np.testing.assert_allclose(rep.block("nu", normalized=True), rep.block("nu") * t_s)
    buf = io.StringIO()
    write_crlb_csv(buf, rep, extra={"snr_db": 10.0})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "snr_db,parameter,value,bound,normalized_bound"
    assert len(lines) == 1 + 18
    assert lines[1].startswith("10.0,alpha_re[0],")
