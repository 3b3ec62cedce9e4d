"""Brute-force simulation of the optimal radar SNR and ZF SINR, plus goodness-of-fit tools.

Trial ``i`` draws its channels from the stream ``SeedSequence(seed, spawn_key=(i,))``;
a degenerate draw (rank-deficient G or effective user channels, expected never)
is redrawn from ``spawn_key=(i, attempt)``. Trials are processed in vectorized
chunks and optionally across threads; the output depends only on (seed, trial
indices).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .beamforming import RANK_TOL, phase_normalize
from .channels import crandn
from .config import DerivedGains, Geometry, SystemConfig, derive_gains
from .errors import InvalidParameterError
from .statistics import comm_sinr_cdf, radar_snr_cdf

CHUNK = 2048
MAX_ATTEMPTS = 16


@dataclass(frozen=True)
class MetricSamples:
    radar: np.ndarray      # (T,) maximum radar SNR per trial
    comm: np.ndarray       # (T, K) ZF SINR per trial and user
    seed: int
    start: int
    resampled: int

    @property
    def trials(self) -> int:
        return self.radar.shape[0]


def _stream(seed: int, trial: int, attempt: int) -> np.random.Generator:
    key = (trial,) if attempt == 0 else (trial, attempt)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _draw(seed, trial, attempt, M, N, K):
    rng = _stream(seed, trial, attempt)
    return crandn(rng, N, M), crandn(rng, K, N), crandn(rng, N)


def batch_metrics(G: np.ndarray, h_ck: np.ndarray, h_rt: np.ndarray, gains: DerivedGains):
    """Radar SNR and ZF SINRs for a stack of realizations under the optimal design.

    G is (T, N, M), h_ck (T, K, N), h_rt (T, N). Returns (radar (T,), comm (T, K), ok (T,)).
    """
    T, N, M = G.shape
    K = h_ck.shape[1]
    _, s, Vh = np.linalg.svd(G, full_matrices=False)
    lam = s ** 2
    V = np.conj(np.swapaxes(Vh, -1, -2))
    V = V * phase_normalize(V)[:, None, :]
    Vh = np.conj(np.swapaxes(V, -1, -2))
    sq = np.sqrt(lam)

    # with Theta = U^H: h_k^H = sum_{n<M} conj(h_ck[n]) sqrt(lam_n) v_n^H
    rows_k = (np.conj(h_ck[:, :, :M]) * sq[:, None, :]) @ Vh          # (T, K, M) = h_k^H
    row_r = np.einsum("tm,tmj->tj", np.conj(h_rt[:, :M]) * sq, Vh)    # (T, M)    = h_r^H
    q = np.sum(lam * np.abs(h_rt[:, :M]) ** 2, axis=1)                # ||h_r||^2
    radar = gains.gbar_rt / M * q ** 2

    H = np.conj(np.swapaxes(rows_k, -1, -2))                          # (T, M, K) columns h_k
    gram = np.conj(np.swapaxes(H, -1, -2)) @ H
    ok = lam[:, -1] >= RANK_TOL * lam[:, 0]
    sv = np.linalg.svd(H, compute_uv=False)
    ok &= sv[:, -1] >= RANK_TOL * sv[:, 0]
    gram_inv = np.linalg.inv(np.where(ok[:, None, None], gram, np.eye(K)))
    hph = 1.0 / np.real(np.diagonal(gram_inv, axis1=-2, axis2=-1))    # (T, K)
    cross = np.abs(rows_k @ np.conj(row_r)[:, :, None])[..., 0] ** 2  # |h_k^H h_r|^2
    num = gains.gbar_ck[None, :] / K * hph * q[:, None]
    comm = num / (gains.gbar_rk[None, :] / M * cross + q[:, None])
    return radar, comm, ok


def _run_chunk(seed, lo, hi, M, N, K, gains):
    n = hi - lo
    G = np.empty((n, N, M), complex)
    hc = np.empty((n, K, N), complex)
    hr = np.empty((n, N), complex)
    for j, i in enumerate(range(lo, hi)):
        G[j], hc[j], hr[j] = _draw(seed, i, 0, M, N, K)
    radar, comm, ok = batch_metrics(G, hc, hr, gains)
    redraws = 0
    for j in np.flatnonzero(~ok):
        for attempt in range(1, MAX_ATTEMPTS + 1):
            redraws += 1
            g1, c1, r1 = _draw(seed, lo + j, attempt, M, N, K)
            rad1, com1, ok1 = batch_metrics(g1[None], c1[None], r1[None], gains)
            if ok1[0]:
                radar[j], comm[j] = rad1[0], com1[0]
                break
        else:
            raise RuntimeError(f"trial {lo + j}: {MAX_ATTEMPTS} consecutive degenerate draws")
    return radar, comm, redraws


def simulate_metrics(config: SystemConfig, geom: Geometry, trials: int, seed: int,
                     start: int = 0, workers: int = 1, gains: DerivedGains | None = None) -> MetricSamples:
    """Per trial: draw channels, set Theta = U^H and MRT radar beams, ZF precode, evaluate."""
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    gains = derive_gains(config, geom) if gains is None else gains
    M, N, K = config.M, config.N, config.K
    bounds = [(lo, min(lo + CHUNK, start + trials)) for lo in range(start, start + trials, CHUNK)]
    job = lambda b: _run_chunk(seed, b[0], b[1], M, N, K, gains)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    return MetricSamples(radar=np.concatenate([p[0] for p in parts]),
                         comm=np.concatenate([p[1] for p in parts]),
                         seed=seed, start=start, resampled=sum(p[2] for p in parts))


# -- empirical distributions -----------------------------------------------------

class EmpiricalCdf:
    """Right-continuous empirical CDF of a sample."""

    def __init__(self, samples):
        self.samples = np.sort(np.asarray(samples, dtype=float).ravel())

    @property
    def count(self) -> int:
        return self.samples.size

    def __call__(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.count

    def left(self, x):
        return np.searchsorted(self.samples, x, side="left") / self.count


def ks_distance(emp: EmpiricalCdf, cdf) -> float:
    """sup_x |F_emp(x) - F(x)|, checked on both sides of every jump of F_emp."""
    if emp.count < 100:
        raise InvalidParameterError(f"KS distance needs at least 100 samples, got {emp.count}")
    x = np.unique(emp.samples)
    f_at = np.asarray(cdf(x), dtype=float)
    f_before = np.asarray(cdf(np.nextafter(x, -np.inf)), dtype=float)
    upper = np.max(np.abs(emp(x) - f_at))
    lower = np.max(np.abs(emp.left(x) - f_before))
    return float(max(upper, lower))


def binomial_se(p_hat: float, n: int) -> float:
    return float(np.sqrt(p_hat * (1.0 - p_hat) / n))


@dataclass
class SimReport:
    trials: int
    seed: int
    op_r: float
    op_r_se: float
    op_r_analytic: float
    op_c: list
    op_c_se: list
    op_c_analytic: list
    ks_radar: float
    ks_comm: list
    resampled: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def validate(config: SystemConfig, geom: Geometry, trials: int, seed: int,
             samples: MetricSamples | None = None, workers: int = 1) -> SimReport:
    """Empirical vs analytic outage and KS distances for one configuration."""
    g = derive_gains(config, geom)
    s = simulate_metrics(config, geom, trials, seed, workers=workers, gains=g) if samples is None else samples
    M, N, K = config.M, config.N, config.K
    n = s.trials
    op_r = float(np.mean(s.radar <= g.gamma_r_th))
    op_c = [float(np.mean(s.comm[:, k] <= g.gamma_c_th)) for k in range(K)]
    rad_cdf = lambda x: radar_snr_cdf(x, M, N, g.gbar_rt)
    ks_c, an_c = [], []
    for k in range(K):
        cdf_k = lambda x, k=k: comm_sinr_cdf(x, M, K, g.sir_k[k], g.varrho)
        ks_c.append(ks_distance(EmpiricalCdf(s.comm[:, k]), cdf_k))
        an_c.append(float(cdf_k(g.gamma_c_th)))
    return SimReport(
        trials=n, seed=s.seed,
        op_r=op_r, op_r_se=binomial_se(op_r, n), op_r_analytic=float(rad_cdf(g.gamma_r_th)),
        op_c=op_c, op_c_se=[binomial_se(p, n) for p in op_c], op_c_analytic=an_c,
        ks_radar=ks_distance(EmpiricalCdf(s.radar), rad_cdf), ks_comm=ks_c,
        resampled=s.resampled,
    )


def cdf_rows(samples, cdf, gammas):
    """(gamma, empirical CDF, analytic CDF) rows on a threshold grid."""
    emp = EmpiricalCdf(samples)
    gammas = np.asarray(gammas, dtype=float)
    return list(zip(gammas.tolist(), emp(gammas).tolist(), np.asarray(cdf(gammas), float).tolist()))
