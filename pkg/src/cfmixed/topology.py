"""Network drops: AP/user placement, wrap-around distances, large-scale fading
and spatial correlation matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PATHLOSS_MODELS = ("logDistance", "threeSlopeLike")
CORRELATION_MODELS = ("uncorrelated", "localScattering")

# log-distance model constants (dB)
PL_INTERCEPT_DB = -30.5
PL_SLOPE_DB = -36.7


@dataclass
class NetworkConfig:
    area_side: float = 1000.0
    num_aps: int = 30
    num_users: int = 20
    antennas_per_ap: int = 10
    wrap_around: bool = True
    pathloss_model: str = "logDistance"
    correlation_model: str = "uncorrelated"
    asd_deg: float = 10.0
    noise_power: float = float(10 ** ((-174 + 10 * np.log10(1024 * 15e3) + 7 - 30) / 10))
    shadowing_std_db: float = 4.0
    min_distance: float = 1.0

    def __post_init__(self):
        if self.num_aps < 1 or self.num_users < 1 or self.antennas_per_ap < 1:
            raise ValueError("num_aps, num_users and antennas_per_ap must be >= 1")
        if self.area_side <= 0:
            raise ValueError("area_side must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.min_distance <= 0:
            raise ValueError("min_distance must be positive")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing_std_db must be non-negative")
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise ValueError(f"unknown pathloss_model {self.pathloss_model!r}")
        if self.correlation_model not in CORRELATION_MODELS:
            raise ValueError(f"unknown correlation_model {self.correlation_model!r}")


@dataclass
class NetworkDrop:
    """One random realization of the geometry.

    Arrays are indexed ``[q, k]`` (AP first, user second); ``R`` has shape
    ``(Q, K, M, M)``.
    """

    ap_positions: np.ndarray
    user_positions: np.ndarray
    distances: np.ndarray
    beta: np.ndarray
    R: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_aps(self) -> int:
        return self.distances.shape[0]

    @property
    def num_users(self) -> int:
        return self.distances.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.R.shape[-1]


def _offsets(a, b, area_side, wrap):
    """Displacement b - a, shortest over the toroidal images when wrapping."""
    diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    if wrap:
        # nearest image per axis == minimum over the 9 shifts for a square torus
        diff = diff - area_side * np.round(diff / area_side)
    return diff


def wrap_distance(a, b, area_side: float, min_distance: float = 1.0) -> float:
    """Toroidal distance between two points of the square ``[0, area_side)^2``.

    The minimum is taken over the 9 shifted images of ``b``, and the result
    is floored at ``min_distance``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shifts = area_side * np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)])
    d = np.min(np.linalg.norm(b + shifts - a, axis=1))
    return float(max(d, min_distance))


def pairwise_distances(ap_positions, user_positions, area_side, wrap=True,
                       min_distance=1.0):
    """Q x K distance matrix (wrap-around metric when ``wrap``)."""
    diff = _offsets(ap_positions[:, None, :], user_positions[None, :, :],
                    area_side, wrap)
    return np.maximum(np.hypot(diff[..., 0], diff[..., 1]), min_distance)


def large_scale(d, model="logDistance", shadowing_std_db=0.0, rng=None):
    """Large-scale fading gain(s) for distance(s) ``d`` in meters.

    ``logDistance`` is ``-30.5 - 36.7 log10(d)`` dB. ``threeSlopeLike`` is the
    three-slope COST-231 Hata variant common in cell-free studies (1.9 GHz,
    15 m AP height, 1.65 m user height, breakpoints at 10 m and 50 m).
    Log-normal shadowing is added when ``shadowing_std_db > 0``; that needs
    ``rng``.
    """
    d = np.asarray(d, dtype=float)
    if model == "logDistance":
        beta_db = PL_INTERCEPT_DB + PL_SLOPE_DB * np.log10(d)
    elif model == "threeSlopeLike":
        beta_db = _three_slope_db(d)
    else:
        raise ValueError(f"unknown pathloss model {model!r}")
    if shadowing_std_db > 0:
        if rng is None:
            raise ValueError("shadowing requires an rng")
        beta_db = beta_db + shadowing_std_db * rng.standard_normal(d.shape)
    out = 10.0 ** (beta_db / 10.0)
    return float(out) if out.ndim == 0 else out


def _three_slope_db(d, f_mhz=1900.0, h_ap=15.0, h_user=1.65, d0=10.0, d1=50.0):
    L = (46.3 + 33.9 * np.log10(f_mhz) - 13.82 * np.log10(h_ap)
         - (1.1 * np.log10(f_mhz) - 0.7) * h_user + (1.56 * np.log10(f_mhz) - 0.8))
    dk = np.maximum(d, d0) / 1e3
    far = -L - 35.0 * np.log10(dk)
    mid = -L - 15.0 * np.log10(d1 / 1e3) - 20.0 * np.log10(dk)
    return np.where(d > d1, far, mid)


def local_scattering_matrix(M: int, angle: float, asd_deg: float) -> np.ndarray:
    """Unit-gain Gaussian local-scattering correlation of a half-wavelength ULA.

    Uses the small-angle closed form
    ``[R]_{l,m} = exp(j*pi*(l-m)*sin(a)) * exp(-(s*pi*(l-m)*cos(a))**2 / 2)``
    with nominal angle ``a`` and angular standard deviation ``s`` (radians).
    """
    sigma = np.deg2rad(asd_deg)
    lag = np.subtract.outer(np.arange(M), np.arange(M))
    return (np.exp(1j * np.pi * lag * np.sin(angle))
            * np.exp(-0.5 * (sigma * np.pi * lag * np.cos(angle)) ** 2))


def correlation_matrix(beta: float, M: int, model="uncorrelated", angle=0.0,
                       asd_deg=10.0, diagnostics=None) -> np.ndarray:
    """M x M Hermitian PSD correlation matrix with ``tr(R)/M == beta``.

    Negative eigenvalues from round-off are clipped at zero, the trace is
    restored, and ``diagnostics['psd_clipped']`` is incremented.
    """
    if model == "uncorrelated":
        return beta * np.eye(M, dtype=complex)
    if model != "localScattering":
        raise ValueError(f"unknown correlation model {model!r}")
    R = local_scattering_matrix(M, angle, asd_deg)
    R = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(R)
    if w.min() < 0:
        if diagnostics is not None:
            diagnostics["psd_clipped"] = diagnostics.get("psd_clipped", 0) + 1
        w = np.clip(w, 0.0, None)
        R = (V * w) @ V.conj().T
        R = 0.5 * (R + R.conj().T)
    R *= M / np.trace(R).real
    return beta * R


def generate_drop(cfg: NetworkConfig, seed) -> NetworkDrop:
    """Draw AP and user positions uniformly and compute all geometry statistics.

    ``seed`` may be an int, a ``numpy.random.SeedSequence`` or a
    ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    Q, K, M = cfg.num_aps, cfg.num_users, cfg.antennas_per_ap
    aps = rng.uniform(0.0, cfg.area_side, size=(Q, 2))
    users = rng.uniform(0.0, cfg.area_side, size=(K, 2))
    disp = _offsets(aps[:, None, :], users[None, :, :], cfg.area_side,
                    cfg.wrap_around)
    dist = np.maximum(np.hypot(disp[..., 0], disp[..., 1]), cfg.min_distance)
    beta = large_scale(dist, cfg.pathloss_model, cfg.shadowing_std_db, rng)

    diagnostics = {"psd_clipped": 0}
    if cfg.correlation_model == "uncorrelated":
        R = beta[:, :, None, None] * np.eye(M, dtype=complex)
    else:
        angles = np.arctan2(disp[..., 1], disp[..., 0])
        R = np.empty((Q, K, M, M), dtype=complex)
        for q in range(Q):
            for k in range(K):
                R[q, k] = correlation_matrix(beta[q, k], M, cfg.correlation_model,
                                             angles[q, k], cfg.asd_deg, diagnostics)
    return NetworkDrop(aps, users, dist, beta, R, diagnostics)
