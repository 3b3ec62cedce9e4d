"""Network parameters, unit conversions and large-scale gain derivation.

All powers enter in dBm and are converted with ``P_W = 10**((P_dBm - 30) / 10)``.
The reference path loss uses the 3GPP UMi form ``10**(-2.27 - 2.6 log10(f_c/GHz))``;
the logarithm is read as base 10 (3GPP convention).

Config files are TOML with unit-suffixed keys, e.g.::

    m = 4
    k = 3
    n = 64
    f_c_ghz = 2.0
    alpha = 3.67
    p_c_dbm = 15.0          # scalar (equal power) or list of K values
    p_r_dbm = 20.0
    sigma_k_dbm = -104.0    # scalar or list of K values
    sigma_r_dbm = -104.0
    varsigma_r_sq = 1.0
    rate_bps_hz = 2.0
    gamma_r_th_db = 30.0
    hop_gain_db = 0.0       # extra gain per hop, 0 = unit antenna gains

    [geometry]
    ris_pos_m = [50.0, 50.0]
    target_pos_m = [100.0, 0.0]
    user_pos_m = [[10.0, 20.0], [30.0, 80.0], [90.0, 40.0]]
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
import numpy as np

from .errors import InvalidParameterError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

Vec2 = tuple[float, float]


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def pathloss_reference(f_c: float) -> float:
    """Reference path loss (linear gain) at carrier frequency ``f_c`` in GHz."""
    if not np.isfinite(f_c) or f_c <= 0:
        raise InvalidParameterError(f"carrier frequency must be positive, got {f_c!r}")
    return 10.0 ** (-2.27 - 2.6 * math.log10(f_c))


def varrho(M: int, K: int, N) -> float:
    """Deterministic SINR scaling N*M / (K*(M+N-1)); tends to M/K as N grows."""
    N = np.asarray(N, dtype=float)
    out = N * M / (K * (M + N - 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SystemConfig:
    M: int
    K: int
    N: int
    f_c_ghz: float = 2.0
    alpha: float = 3.67
    p_c_dbm: tuple[float, ...] = 15.0  # scalar broadcasts to all K users
    p_r_dbm: float = 20.0
    sigma_k_dbm: tuple[float, ...] = -104.0
    sigma_r_dbm: float = -104.0
    varsigma_r_sq: float = 1.0
    rate: float = 2.0
    gamma_r_th_db: float = 30.0
    hop_gain_db: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p_c_dbm", _per_user(self.p_c_dbm, self.K, "p_c_dbm"))
        object.__setattr__(self, "sigma_k_dbm", _per_user(self.sigma_k_dbm, self.K, "sigma_k_dbm"))
        for name in ("M", "K", "N"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not self.K <= self.M <= self.N:
            raise InvalidParameterError(f"need K <= M <= N, got K={self.K}, M={self.M}, N={self.N}")
        scalars = (self.f_c_ghz, self.alpha, self.p_r_dbm, self.sigma_r_dbm,
                   self.varsigma_r_sq, self.rate, self.gamma_r_th_db, self.hop_gain_db)
        if not all(np.isfinite(scalars)) or not all(np.isfinite(self.p_c_dbm + self.sigma_k_dbm)):
            raise InvalidParameterError("all powers, noise levels and thresholds must be finite")
        if self.varsigma_r_sq <= 0:
            raise InvalidParameterError("varsigma_r_sq must be positive")
        if self.f_c_ghz <= 0:
            raise InvalidParameterError("f_c_ghz must be positive")
        if self.N < 4 * self.M:
            warnings.warn(f"N/M = {self.N / self.M:.2f} < 4: large-N closed forms are coarse here",
                          stacklevel=3)

    @classmethod
    def equal_power(cls, M: int, K: int, N: int, p_c_dbm: float = 15.0,
                    sigma_dbm: float = -104.0, **kw) -> "SystemConfig":
        """Config with identical per-user power and noise (the usual evaluation setup)."""
        return cls(M=M, K=K, N=N, p_c_dbm=(p_c_dbm,) * K, sigma_k_dbm=(sigma_dbm,) * K,
                   sigma_r_dbm=kw.pop("sigma_r_dbm", sigma_dbm), **kw)

    def with_(self, **changes) -> "SystemConfig":
        if "K" in changes:
            K = changes["K"]
            changes.setdefault("p_c_dbm", (self.p_c_dbm[0],) * K)
            changes.setdefault("sigma_k_dbm", (self.sigma_k_dbm[0],) * K)
        return replace(self, **changes)

    @property
    def gamma_c_th(self) -> float:
        return 2.0 ** self.rate - 1.0

    @property
    def gamma_r_th(self) -> float:
        return float(db_to_linear(self.gamma_r_th_db))


def _per_user(value, K, name):
    if np.ndim(value) == 0:
        return (float(value),) * K
    out = tuple(float(v) for v in value)
    if len(out) != K:
        raise InvalidParameterError(f"{name} needs {K} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class Geometry:
    """2D node positions in meters; the base station sits at the origin."""
    ris_pos: Vec2 = (50.0, 50.0)
    target_pos: Vec2 = (100.0, 0.0)
    user_pos: tuple[Vec2, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ris_pos", _vec2(self.ris_pos))
        object.__setattr__(self, "target_pos", _vec2(self.target_pos))
        object.__setattr__(self, "user_pos", tuple(_vec2(p) for p in self.user_pos))

    @property
    def d_bs_ris(self) -> float:
        return float(np.hypot(*self.ris_pos))

    @property
    def d_r(self) -> float:
        return _dist(self.target_pos, self.ris_pos)

    @property
    def d_ck(self) -> np.ndarray:
        return np.array([_dist(p, self.ris_pos) for p in self.user_pos])


def _vec2(p) -> Vec2:
    x, y = (float(v) for v in p)
    return (x, y)


def _dist(a, b) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def uniform_user_positions(K: int, rng: np.random.Generator, side: float = 100.0) -> tuple[Vec2, ...]:
    """Seeded uniform placement of K users over a ``side x side`` square."""
    pts = rng.uniform(0.0, side, size=(K, 2))
    return tuple((float(x), float(y)) for x, y in pts)


def section5_config(N: int = 64, p_c_dbm: float = 15.0, p_r_dbm: float = 20.0, **kw) -> SystemConfig:
    """Urban-micro evaluation setup: M=4, K=3, f_c=2 GHz, alpha=3.67, -104 dBm noise."""
    M = kw.pop("M", 4)
    K = kw.pop("K", 3)
    return SystemConfig.equal_power(M=M, K=K, N=N, p_c_dbm=p_c_dbm, p_r_dbm=p_r_dbm,
                                    sigma_dbm=-104.0, **kw)


def section5_geometry(K: int = 3, seed: int = 0) -> Geometry:
    """RIS at (50, 50), target at (100, 0), users seeded-uniform on the 100 m square."""
    users = uniform_user_positions(K, np.random.default_rng(seed))
    return Geometry(ris_pos=(50.0, 50.0), target_pos=(100.0, 0.0), user_pos=users)


@dataclass(frozen=True)
class DerivedGains:
    L_ref: float
    L_ck: np.ndarray
    L_r: float
    gbar_ck: np.ndarray
    gbar_rt: float
    gbar_rk: np.ndarray
    sir_k: np.ndarray
    varrho: float
    gamma_c_th: float
    gamma_r_th: float
    # linear-unit copies of the raw inputs, used by the general SINR/SNR evaluators
    p_c_w: np.ndarray = field(repr=False, default=None)
    p_r_w: float = field(repr=False, default=None)
    sigma_k_w: np.ndarray = field(repr=False, default=None)
    sigma_r_w: float = field(repr=False, default=None)
    varsigma_r_sq: float = field(repr=False, default=None)


def hop_pathloss(L_ref: float, d, alpha: float, hop_gain_db: float = 0.0):
    return L_ref * db_to_linear(hop_gain_db) * np.asarray(d, dtype=float) ** (-alpha)


def derive_gains(config: SystemConfig, geom: Geometry) -> DerivedGains:
    if len(geom.user_pos) != config.K:
        raise InvalidParameterError(f"geometry has {len(geom.user_pos)} users, config has K={config.K}")
    d, d_r, d_ck = geom.d_bs_ris, geom.d_r, geom.d_ck
    if d <= 0 or d_r <= 0 or np.any(d_ck <= 0):
        raise InvalidParameterError("BS-RIS, RIS-target and RIS-user distances must be positive")

    L = pathloss_reference(config.f_c_ghz)
    hop = lambda dist: hop_pathloss(L, dist, config.alpha, config.hop_gain_db)
    L_ck = hop(d) * hop(d_ck)
    L_r = float(hop(d) * hop(d_r))

    p_c = dbm_to_watt(config.p_c_dbm)
    p_r = float(dbm_to_watt(config.p_r_dbm))
    s_k = dbm_to_watt(config.sigma_k_dbm)
    s_r = float(dbm_to_watt(config.sigma_r_dbm))

    return DerivedGains(
        L_ref=L,
        L_ck=L_ck,
        L_r=L_r,
        gbar_ck=L_ck * p_c / s_k,
        gbar_rt=p_r * L_r ** 2 * config.varsigma_r_sq / s_r,
        gbar_rk=L_ck * p_r / s_k,
        sir_k=p_c / p_r,
        varrho=varrho(config.M, config.K, config.N),
        gamma_c_th=config.gamma_c_th,
        gamma_r_th=config.gamma_r_th,
        p_c_w=p_c,
        p_r_w=p_r,
        sigma_k_w=s_k,
        sigma_r_w=s_r,
        varsigma_r_sq=config.varsigma_r_sq,
    )


# -- TOML round trip -------------------------------------------------------

_KEYMAP = {
    "m": "M", "k": "K", "n": "N", "f_c_ghz": "f_c_ghz", "alpha": "alpha",
    "p_c_dbm": "p_c_dbm", "p_r_dbm": "p_r_dbm", "sigma_k_dbm": "sigma_k_dbm",
    "sigma_r_dbm": "sigma_r_dbm", "varsigma_r_sq": "varsigma_r_sq",
    "rate_bps_hz": "rate", "gamma_r_th_db": "gamma_r_th_db", "hop_gain_db": "hop_gain_db",
}


def config_from_mapping(data: dict) -> tuple[SystemConfig, Geometry | None]:
    data = dict(data)
    geo = data.pop("geometry", None)
    unknown = set(data) - set(_KEYMAP)
    if unknown:
        raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
    cfg = SystemConfig(**{_KEYMAP[k]: v for k, v in data.items()})
    geom = None
    if geo is not None:
        geom = Geometry(ris_pos=geo.get("ris_pos_m", (50.0, 50.0)),
                        target_pos=geo.get("target_pos_m", (100.0, 0.0)),
                        user_pos=geo.get("user_pos_m", ()))
    return cfg, geom


def load_config(path: str | Path) -> tuple[SystemConfig, Geometry | None]:
    with open(path, "rb") as fh:
        return config_from_mapping(tomllib.load(fh))


def dumps_config(config: SystemConfig, geom: Geometry | None = None) -> str:
    inv = {v: k for k, v in _KEYMAP.items()}
    lines = []
    for f in fields(config):
        lines.append(f"{inv[f.name]} = {_toml_value(getattr(config, f.name))}")
    if geom is not None:
        lines += ["", "[geometry]",
                  f"ris_pos_m = {_toml_value(geom.ris_pos)}",
                  f"target_pos_m = {_toml_value(geom.target_pos)}",
                  f"user_pos_m = {_toml_value(geom.user_pos)}"]
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def config_digest(config: SystemConfig, geom: Geometry | None = None) -> str:
    return hashlib.sha256(dumps_config(config, geom).encode()).hexdigest()[:16]
