"""
Fisher information and Cramer-Rao bounds for the target parameters.

The real parameter vector has ``8K + 2`` entries laid out as

    [Re(alpha) (K), Im(alpha) (K), tau (K), nu (K), phi_sr (K), theta_sr (K),
     phi_ris (K + 1), theta_ris (K + 1)]

where each RIS angle block holds the common arrival angle first and the K
departure angles after it. The ST angles are known and excluded.

With white circular noise of variance ``sigma2`` only the mean depends on the
parameters, so ``F = (2 / sigma2) Re(D^H D)`` where column ``i`` of ``D`` is
``vec(dV / d eta_i)``. Every mean and derivative has the form ``Phi S`` with
``Phi`` a sum of per-target Kronecker (BD) or Khatri-Rao (diagonal) products,
which keeps the Gram computation in the small filtered domain.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError
from .scenario import (
    BD,
    ArrayGeometry,
    TargetParams,
    delay_steering,
    doppler_steering,
    ura_steering,
)
from .tensor_core import khatri_rao

#: Relative eigenvalue threshold of the equilibrated FIM below which a
#: direction is treated as unidentifiable.
SINGULAR_TOL = 1e-10
#: Null-space loading above which a parameter is flagged.
NULL_LOADING = 1e-3

BLOCKS = ("alpha_re", "alpha_im", "tau", "nu", "phi_sr", "theta_sr", "phi_ris", "theta_ris")


def param_layout(k):
    """Canonical names for every entry of the parameter vector.

    Returns
    -------
    list of str
        ``"tau[0]"``, ``"phi_ris[a]"`` (arrival), ``"phi_ris[d0]"`` (departure of
        target 0) and so on, in vector order.
    """
    names = []
    for b in BLOCKS[:6]:
        names += [f"{b}[{i}]" for i in range(k)]
    for b in BLOCKS[6:]:
        names += [f"{b}[a]"] + [f"{b}[d{i}]" for i in range(k)]
    return names


def block_slices(k):
    """Map from block name to its slice in the parameter vector."""
    out, start = {}, 0
    for b in BLOCKS:
        size = k + 1 if b in ("phi_ris", "theta_ris") else k
        out[b] = slice(start, start + size)
        start += size
    return out


def pack_eta(targets, phi_ris_a, theta_ris_a):
    """Build the real parameter vector from target parameters and the RIS arrival angle."""
    k = len(targets)
    al = np.array([t.alpha for t in targets], complex)
    eta = np.concatenate(
        [
            al.real,
            al.imag,
            [t.tau for t in targets],
            [t.nu for t in targets],
            [t.phi_sr for t in targets],
            [t.theta_sr for t in targets],
            [phi_ris_a] + [t.phi_ris_d for t in targets],
            [theta_ris_a] + [t.theta_ris_d for t in targets],
        ]
    ).astype(float)
    assert eta.size == 8 * k + 2
    return eta


def unpack_eta(eta):
    """Inverse of :func:`pack_eta`: ``(targets, phi_ris_a, theta_ris_a)``."""
    eta = np.asarray(eta, float)
    if (eta.size - 2) % 8:
        raise DimensionError(f"parameter vector length {eta.size} is not 8K+2")
    k = (eta.size - 2) // 8
    sl = block_slices(k)
    b = {name: eta[s] for name, s in sl.items()}
    targets = [
        TargetParams(
            phi_sr=float(b["phi_sr"][i]),
            theta_sr=float(b["theta_sr"][i]),
            phi_ris_d=float(b["phi_ris"][i + 1]),
            theta_ris_d=float(b["theta_ris"][i + 1]),
            tau=float(b["tau"][i]),
            nu=float(b["nu"][i]),
            alpha=complex(b["alpha_re"][i], b["alpha_im"][i]),
        )
        for i in range(k)
    ]
    return targets, float(b["phi_ris"][0]), float(b["theta_ris"][0])


def eta_from_scene(scene):
    return pack_eta(scene.targets, scene.phi_ris_a, scene.theta_ris_a)


def d_steering(phi, theta, geom: ArrayGeometry, wrt):
    """Derivative of the URA response with respect to ``phi`` or ``theta``.

    Element ``iy * n_z + iz`` of the response is multiplied by
    ``-j pi (iy cos(phi) sin(theta) - iz sin(phi))`` for ``phi`` and by
    ``-j pi iy sin(phi) cos(theta)`` for ``theta``.
    """
    a = ura_steering(geom, phi, theta)
    iy = np.repeat(np.arange(geom.n_y), geom.n_z)
    iz = np.tile(np.arange(geom.n_z), geom.n_y)
    if wrt == "phi":
        fac = iy * np.cos(phi) * np.sin(theta) - iz * np.sin(phi)
    elif wrt == "theta":
        fac = iy * np.sin(phi) * np.cos(theta)
    else:
        raise ValueError(f"wrt must be 'phi' or 'theta', got {wrt!r}")
    return -1j * np.pi * fac * a


class _Model:
    """Per-target factors of the mean signal at a given parameter vector."""

    def __init__(self, eta, known):
        cfg = known.config
        self.cfg = cfg
        self.known = known
        self.targets, self.phi_a, self.theta_a = unpack_eta(eta)
        self.k = len(self.targets)
        if known.x.shape != (cfg.st.n, cfg.mq):
            raise DimensionError(f"pilot shape {known.x.shape} != {(cfg.st.n, cfg.mq)}")
        rows = cfg.n * cfg.n if cfg.ris_mode == BD else cfg.n
        if known.s.shape[0] != rows:
            raise DimensionError(f"schedule has {known.s.shape[0]} rows, expected {rows}")
        self.ax = known.a_st @ known.x  # a_st^T X, length MQ
        self.b_rx = ura_steering(cfg.ris, self.phi_a, self.theta_a)
        self.q_idx = np.arange(cfg.q)
        self.m_idx = np.arange(cfg.m)

    # factor pieces -------------------------------------------------------
    def a_sr(self, t):
        return ura_steering(self.cfg.sr, t.phi_sr, t.theta_sr)

    def b_tx(self, t):
        return ura_steering(self.cfg.ris, t.phi_ris_d, t.theta_ris_d)

    def f(self, t, wrt=None):
        c = delay_steering(t.tau, self.cfg.q, self.cfg.delta_f)
        d = doppler_steering(t.nu, self.cfg.m, self.cfg.t_s)
        if wrt == "tau":
            c = -2j * np.pi * self.q_idx * self.cfg.delta_f * c
        elif wrt == "nu":
            d = 2j * np.pi * self.m_idx * self.cfg.t_s * d
        return np.kron(c, d)

    def term(self, g, jt):
        """``J^T kron G`` (BD) or ``J^T kr G`` (diagonal) for one target."""
        if self.cfg.ris_mode == BD:
            return np.kron(jt, g)
        return khatri_rao(jt, g)

    def j_t(self, b_rx, f):
        # J^T = (b_rx a_st^T X D(f))^T = (f * ax) b_rx^T
        return np.outer(f * self.ax, b_rx)

    def phi_sum(self, override=None):
        """Filtered-domain mean ``Phi`` with ``V = Phi S``.

        ``override(index, target) -> (g, jt) or None`` substitutes the factors
        of selected targets; targets mapped to ``None`` contribute nothing.
        """
        cfg = self.cfg
        rows = cfg.sr.n * cfg.mq
        cols = cfg.n * cfg.n if cfg.ris_mode == BD else cfg.n
        acc = np.zeros((rows, cols), complex)
        for i, t in enumerate(self.targets):
            if override is None:
                g = t.alpha * np.outer(self.a_sr(t), self.b_tx(t))
                jt = self.j_t(self.b_rx, self.f(t))
            else:
                pair = override(i, t)
                if pair is None:
                    continue
                g, jt = pair
            acc += self.term(g, jt)
        return acc

    def d_phi(self, index):
        """``dPhi / d eta_index``."""
        k = self.k
        sl = block_slices(k)
        for name, s in sl.items():
            if s.start <= index < s.stop:
                block, pos = name, index - s.start
                break
        else:
            raise IndexError(f"parameter index {index} outside [0, {8 * k + 2})")

        def base(t):
            return t.alpha * np.outer(self.a_sr(t), self.b_tx(t)), self.j_t(self.b_rx, self.f(t))

        if block in ("phi_ris", "theta_ris") and pos == 0:
            wrt = block.split("_")[0]
            db = d_steering(self.phi_a, self.theta_a, self.cfg.ris, wrt)
            return self.phi_sum(
                lambda i, t: (base(t)[0], self.j_t(db, self.f(t)))
            )
        target = pos - 1 if block in ("phi_ris", "theta_ris") else pos

        def only(fn):
            return self.phi_sum(lambda i, t: fn(t) if i == target else None)

        if block == "alpha_re":
            return only(lambda t: (np.outer(self.a_sr(t), self.b_tx(t)), base(t)[1]))
        if block == "alpha_im":
            return only(lambda t: (1j * np.outer(self.a_sr(t), self.b_tx(t)), base(t)[1]))
        if block in ("tau", "nu"):
            return only(lambda t: (base(t)[0], self.j_t(self.b_rx, self.f(t, wrt=block))))
        if block in ("phi_sr", "theta_sr"):
            wrt = block.split("_")[0]
            return only(
                lambda t: (
                    t.alpha * np.outer(d_steering(t.phi_sr, t.theta_sr, self.cfg.sr, wrt), self.b_tx(t)),
                    base(t)[1],
                )
            )
        wrt = block.split("_")[0]
        return only(
            lambda t: (
                t.alpha * np.outer(self.a_sr(t), d_steering(t.phi_ris_d, t.theta_ris_d, self.cfg.ris, wrt)),
                base(t)[1],
            )
        )


def mean_signal(eta, known):
    """Noiseless received signal ``V(eta)``, shape ``(L_SR MQ) x T``.

    Parameters
    ----------
    eta : array_like, length 8K+2
    known : object
        Anything exposing ``config``, ``x``, ``s`` (stacked schedule) and
        ``a_st``, e.g. :class:`tendae.pipeline.KnownSystem`.
    """
    m = _Model(eta, known)
    return m.phi_sum() @ known.s


def d_mean_signal(eta, index, known):
    """Analytic ``dV / d eta_index``."""
    m = _Model(eta, known)
    return m.d_phi(index) @ known.s


def natural_steps(eta, known, rel=1e-6):
    """Finite-difference step per parameter, ``rel`` times a natural scale.

    Gains use ``|alpha|``, delay uses ``1/(Q delta_f)``, Doppler uses
    ``1/(M T_s)`` and angles use one radian.
    """
    cfg = known.config
    targets, _, _ = unpack_eta(eta)
    k = len(targets)
    sl = block_slices(k)
    steps = np.ones(8 * k + 2)
    mag = np.array([abs(t.alpha) for t in targets])
    mag = np.where(mag > 0, mag, 1.0)
    steps[sl["alpha_re"]] = mag
    steps[sl["alpha_im"]] = mag
    steps[sl["tau"]] = 1.0 / (cfg.q * cfg.delta_f)
    steps[sl["nu"]] = 1.0 / (cfg.m * cfg.t_s)
    return rel * steps


def fd_mean_signal(eta, index, known, step=None):
    """Central finite-difference ``dV / d eta_index``."""
    eta = np.asarray(eta, float)
    h = natural_steps(eta, known)[index] if step is None else step
    up, dn = eta.copy(), eta.copy()
    up[index] += h
    dn[index] -= h
    return (mean_signal(up, known) - mean_signal(dn, known)) / (2 * h)


@dataclass
class FimMatrix:
    """Real symmetric Fisher information with the noise variance that produced it."""

    matrix: np.ndarray
    noise_variance: float
    names: list = field(default_factory=list)

    def is_symmetric(self, rel=1e-10):
        f = self.matrix
        return bool(np.max(np.abs(f - f.T)) <= rel * max(np.max(np.abs(f)), 1e-300))

    def is_psd(self, rel=1e-10):
        f = self.matrix
        d = np.sqrt(np.abs(np.diag(f)))
        d = np.where(d > 0, d, 1.0)
        ev = np.linalg.eigvalsh(f / np.outer(d, d))
        return bool(ev.min() >= -rel * max(ev.max(), 0.0))


def information_gram(eta, known):
    """``Re(D^H D)`` without the noise factor.

    Uses ``<Phi_i S, Phi_j S> = <Phi_i L, Phi_j L>`` with ``S S^H = L L^H``.
    """
    m = _Model(eta, known)
    u, sv, _ = np.linalg.svd(known.s, full_matrices=False)
    root = u * sv
    n_par = 8 * m.k + 2
    rows = known.config.sr.n * known.config.mq * root.shape[1]
    cols = np.empty((rows, n_par), complex)
    for i in range(n_par):
        cols[:, i] = (m.d_phi(i) @ root).ravel()
    g = (cols.conj().T @ cols).real
    return 0.5 * (g + g.T)


def fim(eta, sigma2, known, gram=None):
    """Fisher information ``(2 / sigma2) Re(D^H D)``.

    Pass a precomputed ``gram`` (from :func:`information_gram`) to evaluate
    several noise levels at the cost of one.
    """
    if not sigma2 > 0:
        raise ValueError(f"noise variance must be positive, got {sigma2}")
    g = information_gram(eta, known) if gram is None else gram
    k = (g.shape[0] - 2) // 8
    return FimMatrix(matrix=g * (2.0 / sigma2), noise_variance=float(sigma2), names=param_layout(k))


@dataclass
class CrlbReport:
    """Per-parameter bounds in parameter-vector order.

    ``normalized`` equals ``bounds`` except that delay entries are divided by
    ``T_s`` and Doppler entries multiplied by it. ``unidentifiable`` lists the
    parameters loaded by the numerical null space of the FIM (empty when it
    is invertible); their bounds are then taken from the pseudo-inverse.
    """

    names: list
    values: np.ndarray
    bounds: np.ndarray
    normalized: np.ndarray
    unidentifiable: list
    singular: bool

    def block(self, name, normalized=False):
        k = (len(self.names) - 2) // 8
        arr = self.normalized if normalized else self.bounds
        return arr[block_slices(k)[name]]

    def to_rows(self):
        return [
            (n, float(v), float(b), float(nb))
            for n, v, b, nb in zip(self.names, self.values, self.bounds, self.normalized)
        ]


def crlb(f: FimMatrix, t_s=None, eta=None):
    """Square roots of the diagonal of ``F^-1``.

    The FIM is symmetrically equilibrated before inversion because its entries
    span many orders of magnitude. A numerically singular FIM falls back to the
    pseudo-inverse and reports the affected parameters.
    """
    mat = np.asarray(f.matrix, float)
    n = mat.shape[0]
    k = (n - 2) // 8
    d = np.sqrt(np.abs(np.diag(mat)))
    zero = d == 0
    d = np.where(zero, 1.0, d)
    eq = mat / np.outer(d, d)
    w, v = np.linalg.eigh(eq)
    keep = w > SINGULAR_TOL * w.max()
    singular = bool((~keep).any() or zero.any())
    inv_eq = (v[:, keep] / w[keep]) @ v[:, keep].T
    var = np.diag(inv_eq) / d**2
    bounds = np.sqrt(np.maximum(var, 0.0))
    flagged = set(np.flatnonzero(zero).tolist())
    if (~keep).any():
        load = np.sum(np.abs(v[:, ~keep]) ** 2, axis=1)
        flagged |= set(np.flatnonzero(load > NULL_LOADING).tolist())
    names = f.names or param_layout(k)
    normalized = bounds.copy()
    if t_s is not None:
        sl = block_slices(k)
        normalized[sl["tau"]] /= t_s
        normalized[sl["nu"]] *= t_s
    values = np.full(n, np.nan) if eta is None else np.asarray(eta, float)
    return CrlbReport(
        names=list(names),
        values=values,
        bounds=bounds,
        normalized=normalized,
        unidentifiable=[names[i] for i in sorted(flagged)],
        singular=singular,
    )


def crlb_for_scene(scene, snr_db=None, known=None):
    """Bounds at the true parameters of ``scene`` and its noise variance."""
    from .pipeline import KnownSystem
    from .scenario import noise_variance

    known = known or KnownSystem.from_scene(scene)
    eta = eta_from_scene(scene)
    sigma2 = scene.noise_var if snr_db is None else noise_variance(scene.y0, snr_db)
    return crlb(fim(eta, sigma2, known), t_s=scene.config.t_s, eta=eta)


def write_crlb_csv(path_or_file, report: CrlbReport, extra=None):
    """CSV rows ``parameter, value, bound, normalized_bound`` plus optional leading columns.

    ``extra`` is a dict of constant columns (for example ``{"snr_db": 20}``)
    written before the standard ones.
    """
    extra = extra or {}
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + ["parameter", "value", "bound", "normalized_bound"])
        for row in report.to_rows():
            w.writerow([*extra.values(), row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    finally:
        if own:
            fh.close()
