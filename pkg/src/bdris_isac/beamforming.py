"""Radar/BD-RIS design, zero-forcing precoding and SNR/SINR evaluators.

Conventions
-----------
* Effective channels are column vectors (see :class:`~bdris_isac.channels.EffectiveChannels`).
* The radar budget ``P_r`` is split evenly over the M radar streams
  (``P_r,m = P_r / M``) and the radar beamformer obeys ``sum_m ||w_r,m||^2 <= 1``.
* With Theta = U^H, the SNR-maximizing radar beams all point along the effective
  radar channel: ``w_r,m = h_r / (||h_r|| sqrt(M))``. This choice attains the
  maximum radar SNR ``(gbar_rt / M) * ||h_r||^4`` exactly and produces the
  rank-one sensing interference seen in the ZF SINR expression. The isotropic
  alternative ``V / sqrt(M)`` is exposed as :func:`isotropic_radar_beams` for
  comparison; it falls short of the maximum by a factor M.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import ChannelSet, EffectiveChannels, check_passive, crandn, effective_channels
from .config import DerivedGains
from .errors import ConstraintViolationError, DegenerateChannelError

RANK_TOL = 1e-12
BEAM_NORM_TOL = 1e-9


@dataclass(frozen=True)
class RadarDesign:
    U: np.ndarray          # (N, N) unitary
    V: np.ndarray          # (M, M) unitary
    Sigma: np.ndarray      # (M,) eigenvalues of G G^H, descending
    Theta: np.ndarray      # (N, N) = U^H
    W_r: np.ndarray | None = None   # (M, M) radar beams, set when h_rt is known

    @property
    def M(self) -> int:
        return self.V.shape[0]

    @property
    def N(self) -> int:
        return self.U.shape[0]


@dataclass(frozen=True)
class ZfDesign:
    W_c: np.ndarray   # (M, K)
    D_c: np.ndarray   # (K,) diagonal of the normalization matrix


def phase_normalize(X: np.ndarray) -> np.ndarray:
    """Unit-modulus factors that make the first non-negligible entry of each column real positive.

    Works on a single matrix (n, m) or a stack (..., n, m).
    """
    mag = np.abs(X)
    thresh = 1e-12 * mag.max(axis=-2, keepdims=True)
    idx = np.argmax(mag > thresh, axis=-2)
    lead = np.take_along_axis(X, idx[..., None, :], axis=-2)[..., 0, :]
    return np.conj(lead) / np.abs(lead)


def design_radar(G: np.ndarray, h_rt: np.ndarray | None = None) -> RadarDesign:
    """SVD-based BD-RIS configuration Theta = U^H (and radar beams when ``h_rt`` is given)."""
    N, M = G.shape
    if N < M:
        raise ConstraintViolationError(f"need N >= M, got G of shape {G.shape}")
    U, s, Vh = np.linalg.svd(G, full_matrices=True)
    lam = s ** 2
    if lam[-1] < RANK_TOL * lam[0]:
        raise DegenerateChannelError(f"G is rank deficient (lambda_min/lambda_max = {lam[-1] / lam[0]:.3g})")
    V = Vh.conj().T
    ph = phase_normalize(V)
    V = V * ph
    U = U.copy()
    U[:, :M] *= ph
    if N > M:
        U[:, M:] *= phase_normalize(U[:, M:])
    theta = U.conj().T
    W_r = None
    if h_rt is not None:
        h_r = (h_rt.conj() @ theta @ G).conj()
        W_r = mrt_radar_beams(h_r)
    return RadarDesign(U=U, V=V, Sigma=lam, Theta=theta, W_r=W_r)


def mrt_radar_beams(h_r: np.ndarray) -> np.ndarray:
    """M radar beams all aligned with the effective radar channel, total norm one."""
    M = h_r.shape[0]
    nrm = np.linalg.norm(h_r)
    if nrm == 0:
        raise DegenerateChannelError("effective radar channel is zero")
    return np.repeat((h_r / (nrm * np.sqrt(M)))[:, None], M, axis=1)


def isotropic_radar_beams(design: RadarDesign) -> np.ndarray:
    return design.V / np.sqrt(design.M)


def max_radar_snr(h_rt: np.ndarray, design: RadarDesign, gbar_rt: float, M: int) -> float:
    """Closed-form maximum radar SNR (gbar_rt / M) * |h_rt^H Sigma h_rt|^2."""
    q = float(np.sum(design.Sigma[:M] * np.abs(h_rt[:M]) ** 2))
    return gbar_rt / M * q * q


def equal_radar_split(gains: DerivedGains, M: int) -> np.ndarray:
    return np.full(M, gains.p_r_w / M)


def radar_snr_general(theta: np.ndarray, W_r: np.ndarray, ch: ChannelSet, gains: DerivedGains,
                      p_r_beams: np.ndarray | None = None, form: str = "direct") -> float:
    """Radar SNR of the matched-filtered echo for arbitrary (Theta, W_r).

    ``form="direct"`` evaluates the norm of ``L_r a^H a w_m`` with ``a = h_rt^H Theta G``;
    ``form="factored"`` uses ``||L_r a||^2 |a w_m|^2``. The two agree identically.
    """
    check_passive(theta)
    M = ch.M
    if W_r.shape != (M, M):
        raise ConstraintViolationError(f"W_r must be {M}x{M}, got {W_r.shape}")
    total = float(np.sum(np.abs(W_r) ** 2))
    if total > 1.0 + BEAM_NORM_TOL:
        raise ConstraintViolationError(f"radar beam norms sum to {total:.12g} > 1")
    if p_r_beams is None:
        p_r_beams = equal_radar_split(gains, M)
    ratio = gains.varsigma_r_sq / gains.sigma_r_w
    a = ch.h_rt.conj() @ theta @ ch.G          # row vector, length M
    if form == "direct":
        R = gains.L_r * np.outer(a.conj(), a)
        per_beam = np.sum(np.abs(R @ W_r) ** 2, axis=0)
    elif form == "factored":
        per_beam = gains.L_r ** 2 * np.sum(np.abs(a) ** 2) * np.abs(a @ W_r) ** 2
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(ratio * np.sum(p_r_beams * per_beam))


def zf_null_gain(H_c: np.ndarray, k: int) -> float:
    """h_k^H P_perp h_k, the energy of h_k orthogonal to the other users' channels."""
    h = H_c[:, k]
    others = np.delete(H_c, k, axis=1)
    if others.shape[1] == 0:
        return float(np.vdot(h, h).real)
    coef, *_ = np.linalg.lstsq(others, h, rcond=None)
    resid = h - others @ coef
    return float(np.vdot(resid, resid).real)


def design_zf(H_c: np.ndarray) -> ZfDesign:
    """ZF precoder W_c = H_c (H_c^H H_c)^{-1} D_c with Tr(W_c W_c^H) = 1."""
    M, K = H_c.shape
    if K > M:
        raise DegenerateChannelError(f"ZF needs K <= M, got K={K}, M={M}")
    s = np.linalg.svd(H_c, compute_uv=False)
    if s[-1] < RANK_TOL * s[0] or s[0] == 0:
        raise DegenerateChannelError("effective channel matrix is rank deficient")
    gram_inv = np.linalg.inv(H_c.conj().T @ H_c)
    d = np.sqrt(1.0 / (K * gram_inv.diagonal().real))
    W = H_c @ gram_inv * d[None, :]
    return ZfDesign(W_c=W, D_c=d)


def zf_sinr(eff: EffectiveChannels, gains: DerivedGains, k: int) -> float:
    """ZF SINR of user k under the optimal radar design (closed-form evaluator)."""
    K, M = eff.h_k.shape
    nr = float(np.vdot(eff.h_r, eff.h_r).real)
    if nr == 0:
        raise DegenerateChannelError("effective radar channel is zero")
    hph = zf_null_gain(eff.H_c, k)
    cross = abs(np.vdot(eff.h_k[k], eff.h_r)) ** 2
    num = gains.gbar_ck[k] / K * hph * nr
    return float(num / (gains.gbar_rk[k] / M * cross + nr))


def general_sinr_terms(eff: EffectiveChannels, W_c: np.ndarray, W_r: np.ndarray,
                       gains: DerivedGains, k: int, p_c_w=None, p_r_beams=None):
    """(desired, inter-user interference, sensing interference), all noise-normalized."""
    K, M = eff.h_k.shape
    p_c = gains.p_c_w if p_c_w is None else np.asarray(p_c_w, dtype=float)
    p_r = equal_radar_split(gains, M) if p_r_beams is None else np.asarray(p_r_beams, dtype=float)
    scale = gains.L_ck[k] / gains.sigma_k_w[k]
    hk = eff.h_k[k]
    comm = np.abs(hk.conj() @ W_c) ** 2
    desired = scale * p_c[k] * comm[k]
    inter = scale * float(np.sum(np.delete(p_c * comm, k)))
    sens = scale * float(np.sum(p_r * np.abs(hk.conj() @ W_r) ** 2))
    return float(desired), inter, sens


def general_sinr(eff: EffectiveChannels, W_c: np.ndarray, W_r: np.ndarray, gains: DerivedGains,
                 k: int, p_c_w=None, p_r_beams=None) -> float:
    desired, inter, sens = general_sinr_terms(eff, W_c, W_r, gains, k, p_c_w, p_r_beams)
    return desired / (inter + sens + 1.0)


def optimal_configuration(ch: ChannelSet):
    """Radar design, effective channels and ZF design for one channel realization."""
    design = design_radar(ch.G, ch.h_rt)
    eff = effective_channels(ch, design.Theta)
    return design, eff, design_zf(eff.H_c)


# -- random feasible probes ----------------------------------------------------

def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed n x n unitary via QR of a complex Gaussian matrix."""
    q, r = np.linalg.qr(crandn(rng, n, n))
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_diagonal_phases(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.diag(np.exp(2j * np.pi * rng.random(n)))


def random_radar_beams(M: int, rng: np.random.Generator) -> np.ndarray:
    W = crandn(rng, M, M)
    return W / np.linalg.norm(W)


def target_aligned_theta(G: np.ndarray, h_rt: np.ndarray, design: RadarDesign) -> np.ndarray:
    """Unitary Theta = Q U^H that steers h_rt onto the strongest left singular vector of G.

    Gives ||h_r||^2 = lambda_1 ||h_rt||^2, the largest value any passive Theta can reach.
    """
    N = G.shape[0]
    e = h_rt / np.linalg.norm(h_rt)
    basis = np.column_stack([e, np.eye(N, dtype=complex)])
    Q, r = np.linalg.qr(basis)
    Q = Q[:, :N] * (r[0, 0] / abs(r[0, 0]))
    return Q @ design.U.conj().T
