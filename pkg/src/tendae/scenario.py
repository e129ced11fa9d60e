"""
Ground-truth scenes and received-signal synthesis.

A scene bundles the system configuration, the target parameters, the pilot
matrix, the RIS schedule and the channel matrices. The received signal over
``T`` RIS slots is

    Y_t = sum_k G_k S_t J_k,        Y = [vec(Y_1), ..., vec(Y_T)]

with ``G_k = alpha_k a_sr b_tx^T`` (RIS to receiver), ``H = b_rx a_st^T``
(transmitter to RIS) and ``J_k = H X D(c(tau_k) kron d(nu_k))``. Columns of
the ``L_ST x MQ`` pilot matrix are indexed ``q*M + m``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import hadamard
from scipy.stats import unitary_group

from .exceptions import IdentifiabilityError, UnsupportedSizeError

C0 = 299_792_458.0
BD = "bd"
DIAGONAL = "diagonal"
RIS_MODES = (BD, DIAGONAL)


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform rectangular array in the y-z plane with half-wavelength spacing."""

    n_y: int
    n_z: int

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError(f"array dimensions must be >= 1, got {self.n_y}x{self.n_z}")

    @property
    def n(self) -> int:
        return self.n_y * self.n_z


@dataclass(frozen=True)
class TargetParams:
    """Per-target ground truth. Angles in radians, delay in s, Doppler in Hz."""

    phi_sr: float
    theta_sr: float
    phi_ris_d: float
    theta_ris_d: float
    tau: float
    nu: float
    alpha: complex


@dataclass(frozen=True)
class ScenarioConfig:
    """System parameters. Defaults reproduce the reference simulation setup.

    Angles left as ``None`` are drawn per scene from U(0, pi/2).
    ``gain_model`` selects ``"pathloss"`` (free-space bistatic budget with
    radar cross-section ``rcs``) or ``"unit"`` (unit magnitude, random phase).
    ``min_separation_deg`` enforces, by rejection, a minimum Euclidean
    (phi, theta) distance between any two targets both at the receiver and at
    the RIS departure side.
    """

    st: ArrayGeometry = ArrayGeometry(2, 2)
    ris: ArrayGeometry = ArrayGeometry(4, 4)
    sr: ArrayGeometry = ArrayGeometry(4, 4)
    k: int = 2
    q: int = 8
    m: int = 8
    t: int = 512
    delta_f: float = 120e3
    carrier_hz: float = 28e9
    phi_st: Optional[float] = None
    theta_st: Optional[float] = None
    phi_ris_a: Optional[float] = None
    theta_ris_a: Optional[float] = None
    ris_mode: str = BD
    seed: int = 0
    gain_model: str = "pathloss"
    rcs: float = 2.0
    distance_range: tuple = (10.0, 250.0)
    max_speed: float = 25.0
    min_separation_deg: Optional[float] = None

    def __post_init__(self):
        for name in ("k", "q", "m", "t"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ris_mode not in RIS_MODES:
            raise ValueError(f"ris_mode must be one of {RIS_MODES}, got {self.ris_mode!r}")
        if self.gain_model not in ("pathloss", "unit"):
            raise ValueError(f"unknown gain_model {self.gain_model!r}")

    @property
    def t_s(self) -> float:
        return 1.0 / self.delta_f

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_hz

    @property
    def mq(self) -> int:
        return self.m * self.q

    @property
    def n(self) -> int:
        return self.ris.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distance_range"] = list(self.distance_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        for key in ("st", "ris", "sr"):
            if key in d and not isinstance(d[key], ArrayGeometry):
                g = d[key]
                d[key] = ArrayGeometry(**g) if isinstance(g, dict) else ArrayGeometry(*g)
        if "distance_range" in d:
            d["distance_range"] = tuple(d["distance_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scene:
    """Immutable-by-convention container for a synthesized scenario."""

    config: ScenarioConfig
    targets: list
    phi_st: float
    theta_st: float
    phi_ris_a: float
    theta_ris_a: float
    x: np.ndarray
    ris_slots: np.ndarray  # (T, N, N) unitary slots, or (N, T) phases when diagonal
    s: np.ndarray  # stacked schedule: N^2 x T (BD) or N x T (diagonal)
    h: np.ndarray
    g: list
    j: list
    y0: np.ndarray
    y: np.ndarray = None
    noise: np.ndarray = None
    snr_db: float = float("inf")
    noise_var: float = 0.0
    seed: Optional[int] = None

    @property
    def a_st(self):
        return ura_steering(self.config.st, self.phi_st, self.theta_st)

    @property
    def b_rx(self):
        return ura_steering(self.config.ris, self.phi_ris_a, self.theta_ris_a)


def spatial_frequencies(phi, theta):
    """Return ``(mu, psi) = (pi sin(phi) sin(theta), pi cos(phi))``."""
    return np.pi * np.sin(phi) * np.sin(theta), np.pi * np.cos(phi)


def ura_from_frequencies(n_y, n_z, mu, psi):
    """URA response for spatial frequencies ``(mu, psi)``.

    Element ``iy * n_z + iz`` equals ``exp(-j (iy mu + iz psi))``.
    """
    ay = np.exp(-1j * mu * np.arange(n_y))
    az = np.exp(-1j * psi * np.arange(n_z))
    return np.kron(ay, az)


def ura_steering(geom: ArrayGeometry, phi, theta):
    """Array response of a half-wavelength URA in the y-z plane.

    Parameters
    ----------
    geom : ArrayGeometry
    phi, theta : float
        Azimuth and elevation in radians.

    Returns
    -------
    ndarray, shape (geom.n,)
        Unit-modulus vector whose first entry is one.
    """
    mu, psi = spatial_frequencies(phi, theta)
    return ura_from_frequencies(geom.n_y, geom.n_z, mu, psi)


def delay_steering(tau, q_count, delta_f):
    """Frequency-domain response ``exp(-j 2 pi q delta_f tau)``, q = 0..Q-1."""
    return np.exp(-2j * np.pi * np.arange(q_count) * delta_f * tau)


def doppler_steering(nu, m_count, t_s):
    """Slow-time response ``exp(+j 2 pi m t_s nu)``, m = 0..M-1."""
    return np.exp(2j * np.pi * np.arange(m_count) * t_s * nu)


def delay_doppler_vector(tau, nu, config: ScenarioConfig):
    """``c(tau) kron d(nu)``, indexed ``q*M + m``."""
    return np.kron(
        delay_steering(tau, config.q, config.delta_f),
        doppler_steering(nu, config.m, config.t_s),
    )


def _fixed_angles(config, rng):
    draws = []
    for value in (config.phi_st, config.theta_st, config.phi_ris_a, config.theta_ris_a):
        draws.append(float(rng.uniform(0.0, np.pi / 2)) if value is None else float(value))
    return tuple(draws)


def _min_pair_distance(angles):
    # angles: (K, 2); Euclidean distance in the (phi, theta) plane
    if len(angles) < 2:
        return np.inf
    d = angles[:, None, :] - angles[None, :, :]
    dist = np.sqrt((d**2).sum(-1))
    return dist[np.triu_indices(len(angles), 1)].min()


def path_gain_magnitude(d1, d2, d3, wavelength, rcs):
    """Free-space radar budget for a RIS-assisted bistatic link.

    ``lambda sqrt(rcs) / ((4 pi)^{3/2} d1 d2 d3)`` with ``d1`` the
    transmitter-RIS, ``d2`` the RIS-target and ``d3`` the target-receiver range.
    """
    return wavelength * np.sqrt(rcs) / ((4 * np.pi) ** 1.5 * d1 * d2 * d3)


def sample_targets(config: ScenarioConfig, rng, max_tries=10_000):
    """Draw ``config.k`` targets.

    Returns
    -------
    list of TargetParams
    """
    lo, hi = config.distance_range
    half_pi = np.pi / 2
    min_sep = None if config.min_separation_deg is None else np.deg2rad(config.min_separation_deg)
    for _ in range(max_tries):
        sr = rng.uniform(0.0, half_pi, size=(config.k, 2))
        ris = rng.uniform(0.0, half_pi, size=(config.k, 2))
        if min_sep is None or (
            _min_pair_distance(sr) >= min_sep and _min_pair_distance(ris) >= min_sep
        ):
            break
    else:
        raise ValueError(
            f"could not place {config.k} targets with {config.min_separation_deg} deg separation"
        )
    d1 = rng.uniform(lo, hi)
    d2 = rng.uniform(lo, hi, size=config.k)
    d3 = rng.uniform(lo, hi, size=config.k)
    speed = rng.uniform(-config.max_speed, config.max_speed, size=config.k)
    phase = rng.uniform(0.0, 2 * np.pi, size=config.k)
    if config.gain_model == "unit":
        mag = np.ones(config.k)
    else:
        mag = path_gain_magnitude(d1, d2, d3, config.wavelength, config.rcs)
    targets = []
    for k in range(config.k):
        targets.append(
            TargetParams(
                phi_sr=float(sr[k, 0]),
                theta_sr=float(sr[k, 1]),
                phi_ris_d=float(ris[k, 0]),
                theta_ris_d=float(ris[k, 1]),
                tau=float((d1 + d2[k] + d3[k]) / C0),
                nu=float(2 * speed[k] / config.wavelength),
                alpha=complex(mag[k] * np.exp(1j * phase[k])),
            )
        )
    return targets


def make_ris_schedule(n, t_count, mode, rng):
    """Random RIS configurations, one per slot.

    Returns
    -------
    slots : ndarray
        ``(T, N, N)`` Haar unitaries (BD) or ``(N, T)`` unit-modulus phases
        (diagonal).
    stacked : ndarray
        ``N^2 x T`` matrix of ``vec(S_t)`` (BD) or the ``N x T`` phase matrix.
    """
    if mode == BD:
        if t_count < n * n:
            raise IdentifiabilityError([f"T >= N^2 violated: T={t_count} < N^2={n * n}"])
        if n == 1:
            slots = np.exp(2j * np.pi * rng.uniform(size=(t_count, 1, 1)))
        else:
            slots = unitary_group.rvs(n, size=t_count, random_state=rng).reshape(t_count, n, n)
        stacked = slots.transpose(2, 1, 0).reshape(n * n, t_count)
        return slots, stacked
    if mode == DIAGONAL:
        if t_count < n:
            raise IdentifiabilityError([f"T >= N violated: T={t_count} < N={n}"])
        phases = np.exp(2j * np.pi * rng.uniform(size=(n, t_count)))
        return phases, phases
    raise ValueError(f"unknown RIS mode {mode!r}")


def make_pilots(l_st, mq):
    """First ``l_st`` rows of the ``mq x mq`` Sylvester-Hadamard matrix."""
    if l_st > mq:
        raise UnsupportedSizeError(f"need mq >= l_st, got mq={mq}, l_st={l_st}")
    try:
        h = hadamard(mq)
    except ValueError as exc:
        raise UnsupportedSizeError(f"Hadamard pilots need a power-of-two MQ, got {mq}") from exc
    return h[:l_st].astype(complex)


def build_channels(config: ScenarioConfig, targets, x, angles):
    """Channel matrices for a target list.

    Parameters
    ----------
    angles : tuple
        ``(phi_st, theta_st, phi_ris_a, theta_ris_a)``.

    Returns
    -------
    h : ndarray, N x L_ST
    g : list of ndarray, each L_SR x N
    j : list of ndarray, each N x MQ
    """
    phi_st, theta_st, phi_a, theta_a = angles
    h = np.outer(ura_steering(config.ris, phi_a, theta_a), ura_steering(config.st, phi_st, theta_st))
    if x.shape != (config.st.n, config.mq):
        raise ValueError(f"pilot shape {x.shape} != {(config.st.n, config.mq)}")
    hx = h @ x
    g, j = [], []
    for tg in targets:
        a = ura_steering(config.sr, tg.phi_sr, tg.theta_sr)
        b = ura_steering(config.ris, tg.phi_ris_d, tg.theta_ris_d)
        g.append(tg.alpha * np.outer(a, b))
        j.append(hx * delay_doppler_vector(tg.tau, tg.nu, config)[None, :])
    return h, g, j


def noiseless_signal(g, j, slots, mode):
    """``Y0`` with column ``t`` equal to ``vec(sum_k G_k S_t J_k)``."""
    l_sr = g[0].shape[0]
    mq = j[0].shape[1]
    if mode == BD:
        t_count = slots.shape[0]
        acc = np.zeros((t_count, l_sr, mq), complex)
        for gk, jk in zip(g, j):
            acc += np.einsum("ln,tnp,pc->tlc", gk, slots, jk, optimize=True)
    else:
        t_count = slots.shape[1]
        acc = np.zeros((t_count, l_sr, mq), complex)
        for gk, jk in zip(g, j):
            acc += np.einsum("ln,nt,nc->tlc", gk, slots, jk, optimize=True)
    # vec of each slot stacks columns: index l + c * L_SR
    return acc.transpose(0, 2, 1).reshape(t_count, mq * l_sr).T


def build_scene(config: ScenarioConfig, rng=None, targets=None, check=True) -> Scene:
    """Draw a scene (targets, pilots, schedule) and compute its noiseless signal.

    The identifiability guard runs first unless ``check`` is False.
    """
    if check:
        from .harness import check_identifiability

        check_identifiability(config)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    angles = _fixed_angles(config, rng)
    if targets is None:
        targets = sample_targets(config, rng)
    if len(targets) != config.k:
        raise ValueError(f"expected {config.k} targets, got {len(targets)}")
    x = make_pilots(config.st.n, config.mq)
    slots, stacked = make_ris_schedule(config.n, config.t, config.ris_mode, rng)
    h, g, j = build_channels(config, targets, x, angles)
    y0 = noiseless_signal(g, j, slots, config.ris_mode)
    return Scene(
        config=config,
        targets=list(targets),
        phi_st=angles[0],
        theta_st=angles[1],
        phi_ris_a=angles[2],
        theta_ris_a=angles[3],
        x=x,
        ris_slots=slots,
        s=stacked,
        h=h,
        g=g,
        j=j,
        y0=y0,
        y=y0.copy(),
        noise=np.zeros_like(y0),
        seed=config.seed,
    )


def noise_variance(y0, snr_db):
    """Per-entry noise variance implied by ``||Y0||^2 / (numel * snr)``."""
    if np.isinf(snr_db):
        return 0.0
    return float(np.vdot(y0, y0).real / (y0.size * 10 ** (snr_db / 10)))


def synthesize(scene: Scene, snr_db, rng) -> Scene:
    """Return a copy of ``scene`` with circular Gaussian noise added.

    The noise realization is rescaled so that ``||Y0||^2 / ||Z||^2`` equals the
    requested SNR exactly. ``snr_db = inf`` yields ``Z = 0``.
    """
    y0 = scene.y0
    if np.isinf(snr_db) and snr_db > 0:
        z = np.zeros_like(y0)
    else:
        z = rng.standard_normal(y0.shape) + 1j * rng.standard_normal(y0.shape)
        target = np.vdot(y0, y0).real / 10 ** (snr_db / 10)
        z *= np.sqrt(target / np.vdot(z, z).real)
    return replace(
        scene, y=y0 + z, noise=z, snr_db=float(snr_db), noise_var=noise_variance(y0, snr_db)
    )


def effective_channel(scene: Scene):
    """Noiseless end-to-end map, identical to ``scene.y0``."""
    return scene.y0


def target_to_dict(tg: TargetParams) -> dict:
    d = asdict(tg)
    d["alpha"] = [tg.alpha.real, tg.alpha.imag]
    return d


def target_from_dict(d: dict) -> TargetParams:
    d = dict(d)
    re, im = d.pop("alpha")
    return TargetParams(alpha=complex(re, im), **d)


def signal_digest(y) -> str:
    return hashlib.sha256(np.ascontiguousarray(y, dtype=np.complex128).tobytes()).hexdigest()


def scene_to_json(scene: Scene) -> str:
    """Serialize config, targets, seed and a SHA-256 digest of ``Y``.

    The schema is::

        {"format": "tendae-scene/1", "config": {...}, "seed": int,
         "fixed_angles": {"phi_st": .., "theta_st": .., "phi_ris_a": .., "theta_ris_a": ..},
         "targets": [{"phi_sr": .., ..., "alpha": [re, im]}, ...],
         "snr_db": float | "inf", "y_sha256": hex}
    """
    doc = {
        "format": "tendae-scene/1",
        "config": scene.config.to_dict(),
        "seed": scene.seed,
        "fixed_angles": {
            "phi_st": scene.phi_st,
            "theta_st": scene.theta_st,
            "phi_ris_a": scene.phi_ris_a,
            "theta_ris_a": scene.theta_ris_a,
        },
        "targets": [target_to_dict(t) for t in scene.targets],
        "snr_db": "inf" if np.isinf(scene.snr_db) else scene.snr_db,
        "y_sha256": signal_digest(scene.y),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def scene_from_json(text: str) -> dict:
    """Parse :func:`scene_to_json` output into config, targets and metadata."""
    doc = json.loads(text)
    if doc.get("format") != "tendae-scene/1":
        raise ValueError(f"unsupported scene format {doc.get('format')!r}")
    doc["config"] = ScenarioConfig.from_dict(doc["config"])
    doc["targets"] = [target_from_dict(t) for t in doc["targets"]]
    return doc
