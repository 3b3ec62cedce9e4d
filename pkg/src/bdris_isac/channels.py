"""Small-scale fading samples and BD-RIS effective channels.

CN(0, 1) means zero mean, unit variance, i.e. variance 1/2 on each of the real
and imaginary parts.

Every Monte Carlo trial owns an independent random stream derived from
``(master_seed, trial_index)`` through :class:`numpy.random.SeedSequence`, so
results do not depend on how trials are chunked or distributed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConstraintViolationError

PASSIVITY_TOL = 1e-9


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Generator for one trial, independent of every other (seed, trial) pair."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(trial,))))


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """i.i.d. CN(0, 1) samples."""
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


@dataclass(frozen=True)
class ChannelSet:
    G: np.ndarray      # (N, M) BS -> RIS
    h_ck: np.ndarray   # (K, N) RIS -> user k, one row per user
    h_rt: np.ndarray   # (N,) RIS -> target

    @property
    def N(self) -> int:
        return self.G.shape[0]

    @property
    def M(self) -> int:
        return self.G.shape[1]

    @property
    def K(self) -> int:
        return self.h_ck.shape[0]


@dataclass(frozen=True)
class EffectiveChannels:
    """Column-vector form of the cascaded channels.

    ``h_k[k]`` is the M-vector with ``h_k[k].conj() == h_ck[k].conj() @ Theta @ G``
    and ``h_r.conj() == h_rt.conj() @ Theta @ G``.
    """
    h_k: np.ndarray    # (K, M)
    h_r: np.ndarray    # (M,)

    @property
    def H_c(self) -> np.ndarray:
        """M x K matrix with the user channels as columns."""
        return self.h_k.T


def sample_channels(M: int, N: int, K: int, rng: np.random.Generator) -> ChannelSet:
    """Draw one independent fading realization (G, h_c,k, h_r,t)."""
    G = crandn(rng, N, M)
    h_ck = crandn(rng, K, N)
    h_rt = crandn(rng, N)
    return ChannelSet(G=G, h_ck=h_ck, h_rt=h_rt)


def sample_channels_for(config, seed: int, trial: int = 0) -> ChannelSet:
    return sample_channels(config.M, config.N, config.K, trial_rng(seed, trial))


def check_passive(theta: np.ndarray, tol: float = PASSIVITY_TOL) -> None:
    """Raise unless Theta Theta^H <= I, i.e. the largest singular value is at most 1."""
    top = np.linalg.norm(theta, 2)
    if top ** 2 > 1.0 + tol:
        raise ConstraintViolationError(
            f"phase matrix is not passive: largest eigenvalue of Theta Theta^H is {top ** 2:.6g}")


def effective_channels(ch: ChannelSet, theta: np.ndarray) -> EffectiveChannels:
    N = ch.N
    if theta.shape != (N, N):
        raise ConstraintViolationError(f"Theta must be {N}x{N}, got {theta.shape}")
    check_passive(theta)
    TG = theta @ ch.G
    # row form h^H = h_c^H Theta G, stored conjugated back to columns
    h_k = (ch.h_ck.conj() @ TG).conj()
    h_r = (ch.h_rt.conj() @ TG).conj()
    return EffectiveChannels(h_k=h_k, h_r=h_r)


# -- binary fixture format ---------------------------------------------------
#
# little endian:
#   magic  b"BDRC"        4 bytes
#   N, M, K               3 x uint32
#   G      N*M complex    row-major, interleaved (re, im) float64
#   h_ck   K*N complex    row-major, interleaved (re, im) float64
#   h_rt   N complex      interleaved (re, im) float64

_MAGIC = b"BDRC"
_HEADER = struct.Struct("<4s3I")


def dumps_channels(ch: ChannelSet) -> bytes:
    head = _HEADER.pack(_MAGIC, ch.N, ch.M, ch.K)
    body = b"".join(np.ascontiguousarray(a, dtype="<c16").tobytes()
                    for a in (ch.G, ch.h_ck, ch.h_rt))
    return head + body


def loads_channels(buf: bytes) -> ChannelSet:
    magic, N, M, K = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise ValueError("not a channel dump (bad magic)")
    expected = _HEADER.size + 16 * (N * M + K * N + N)
    if len(buf) != expected:
        raise ValueError(f"channel dump has {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<c16", offset=_HEADER.size).astype(complex)
    G = data[:N * M].reshape(N, M)
    h_ck = data[N * M:N * M + K * N].reshape(K, N)
    h_rt = data[N * M + K * N:]
    return ChannelSet(G=G, h_ck=h_ck, h_rt=h_rt)


def save_channels(path: str | Path, ch: ChannelSet) -> None:
    Path(path).write_bytes(dumps_channels(ch))


def load_channels(path: str | Path) -> ChannelSet:
    return loads_channels(Path(path).read_bytes())
