"""Successive non-inversion sampling (SNIS) for outage-constrained parameter search.

Goal: draw a vector ``x`` in the box ``[0, b]`` with ``F(x) = y``. Treat ``X`` as
uniform on the box and ``Y = F(X)``; the solutions are draws from ``X | Y = y``.
SNIS samples that law one coordinate at a time:

1. the joint density of the fixed prefix and ``Y`` (smoothed delta, Monte Carlo
   over the free coordinates) detects infeasibility;
2. the conditional CDF ``G`` of the next coordinate is estimated on a grid;
3. the coordinate is drawn as ``b_l * int_0^1 H(V - G(b_l u)) du`` with
   ``V ~ U[0, G(b_l)]``, i.e. inverse-transform sampling without inverting ``G``.

The Dirac delta is replaced by ``K(x / sigma) / sigma`` with the sigmoid kernel
``K(u) = (2/pi) / (e^u + e^-u)``.

Objectives are vectorized: ``F(X)`` maps an ``(n, L)`` array to ``n`` values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .errors import InfeasibleError, InvalidParameterError, NonFiniteIntegrandError

Objective = Callable[[np.ndarray], np.ndarray]

_BLOCK = 1 << 21   # max points evaluated per objective call


def sigmoid_kernel(u):
    a = np.abs(np.asarray(u, dtype=float))
    e = np.exp(-a)
    return (2.0 / np.pi) * e / (1.0 + e * e)


def kernel_delta(x, sigma_err: float):
    if sigma_err <= 0:
        raise InvalidParameterError("sigma_err must be positive")
    return sigmoid_kernel(np.asarray(x, dtype=float) / sigma_err) / sigma_err


def mc_integrate(g: Callable[[np.ndarray], np.ndarray], d: int, n_mc: int,
                 rng: np.random.Generator) -> float:
    """Plain Monte Carlo estimate of the integral of ``g`` over the unit cube ``[0, 1]^d``."""
    if d < 1:
        raise InvalidParameterError("dimension must be >= 1")
    U = rng.random((n_mc, d))
    vals = np.asarray(g(U), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteIntegrandError(f"integrand is {vals[i]} at u = {U[i].tolist()}", point=U[i])
    return float(vals.mean())


@dataclass(frozen=True)
class SnisProblem:
    objective: Objective
    bounds: tuple[float, ...]
    target: float
    names: tuple[str, ...] = ()

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", b)
        if not b or any(not (v > 0 and math.isfinite(v)) for v in b):
            raise InvalidParameterError("bounds must be positive and finite")
        if not 0.0 < self.target < 1.0:
            raise InvalidParameterError("target outage must lie in (0, 1)")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{i + 1}" for i in range(len(b))))

    @property
    def L(self) -> int:
        return len(self.bounds)

    @classmethod
    def from_mapping(cls, mapping, target: float) -> "SnisProblem":
        return cls(objective=mapping.evaluate, bounds=mapping.bounds, target=target, names=mapping.names)

    def volume(self, l: int) -> float:
        """|B_(l)|, product of the first l bounds."""
        return float(np.prod(self.bounds[:l]))

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.objective(np.atleast_2d(X)), dtype=float)


@dataclass(frozen=True)
class SamplerSettings:
    """Numerical knobs.

    Feasibility is decided at ``sigma_err``. With ``anneal=True`` the conditional CDF uses
    the narrowest width in ``sigma_start, sigma_start/10, ..., sigma_err`` whose kernel
    weights have an effective sample size of at least ``min_ess``.
    """
    sigma_err: float = 1e-4
    n_mc: int = 1_000_000
    n_trap: int = 100
    feasibility_eps: float | None = None   # default 1e-6 / prod(b)
    anneal: bool = False
    sigma_start: float = 1e-2
    min_ess: float = 50.0
    v_clamp: float = 0.999

    def __post_init__(self):
        if self.sigma_err <= 0:
            raise InvalidParameterError("sigma_err must be positive")
        if self.n_mc < 1000:
            raise InvalidParameterError("n_mc must be at least 1000")
        if self.n_trap < 2:
            raise InvalidParameterError("n_trap must be at least 2")

    def eps(self, problem: SnisProblem) -> float:
        if self.feasibility_eps is not None:
            return self.feasibility_eps
        return 1e-6 / problem.volume(problem.L)

    def sigmas(self) -> list[float]:
        if not self.anneal:
            return [self.sigma_err]
        out, s = [], max(self.sigma_start, self.sigma_err)
        while s >= self.sigma_err * (1 - 1e-9):
            out.append(s)
            s *= 0.1
        return out


@dataclass
class StepDiagnostics:
    coordinate: int
    joint_density: float
    sigma: float
    ess: float
    G_b: float | None = None
    V: float | None = None
    x: float | None = None


@dataclass
class SnisSolution:
    x_hat: np.ndarray
    achieved: float
    feasible: bool
    failed_at: int | None = None
    steps: list = field(default_factory=list)

    def record(self, problem: SnisProblem, settings: SamplerSettings, seed=None) -> dict:
        return {
            "problem": {"names": list(problem.names), "bounds": list(problem.bounds),
                        "target": problem.target},
            "settings": asdict(settings),
            "seed": seed,
            "feasible": self.feasible,
            "failed_at": self.failed_at,
            "x_hat": [float(v) for v in self.x_hat],
            "achieved": self.achieved,
            "steps": [asdict(s) for s in self.steps],
        }

    def to_json(self, problem, settings, seed=None) -> str:
        return json.dumps(self.record(problem, settings, seed), indent=2)


# -- building blocks -------------------------------------------------------------

def _eval_blocked(problem: SnisProblem, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], _BLOCK):
        out[lo:lo + _BLOCK] = problem(X[lo:lo + _BLOCK])
    if not np.all(np.isfinite(out)):
        i = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NonFiniteIntegrandError(f"objective is {out[i]} at x = {X[i].tolist()}", point=X[i])
    return out


def _prefix_samples(prefix, problem: SnisProblem, n_mc: int, rng):
    """(F, X) with X = (prefix, B_rest * U) for n_mc uniform U."""
    l, L = len(prefix), problem.L
    if l == L:
        X = np.asarray(prefix, dtype=float)[None, :]
        return problem(X), X
    U = rng.random((n_mc, L - l))
    X = np.empty((n_mc, L))
    X[:, :l] = prefix
    X[:, l:] = U * np.asarray(problem.bounds[l:])
    return _eval_blocked(problem, X), X


def _conditional_kernel_means(prefix, x_grid, y, sigma, problem: SnisProblem, n_mc: int, rng) -> np.ndarray:
    """mean_i K_sigma(F(prefix, x_j u_i, B_rest U_rest,i) - y) per grid value x_j.

    The same uniforms are reused for every x_j, and each block of grid points is
    reduced right away, so memory stays bounded for large ``n_mc``.
    """
    l, L = len(prefix), problem.L
    U = rng.random((n_mc, L - l))
    rest = U[:, 1:] * np.asarray(problem.bounds[l + 1:])
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    out = np.empty(x_grid.size)
    per = max(1, _BLOCK // n_mc)
    for lo in range(0, x_grid.size, per):
        xs = x_grid[lo:lo + per]
        X = np.empty((xs.size, n_mc, L))
        X[:, :, :l] = prefix
        X[:, :, l] = xs[:, None] * U[None, :, 0]
        X[:, :, l + 1:] = rest[None]
        F = _eval_blocked(problem, X.reshape(-1, L)).reshape(xs.size, n_mc)
        out[lo:lo + xs.size] = np.mean(kernel_delta(F - y, sigma), axis=1)
    return out


def _ess(w: np.ndarray) -> float:
    s2 = float(np.sum(w * w))
    return float(np.sum(w)) ** 2 / s2 if s2 > 0 else 0.0


def joint_density(x_prefix, y: float, problem: SnisProblem, settings: SamplerSettings,
                  rng: np.random.Generator, sigma: float | None = None) -> float:
    """Smoothed joint density of the prefix X_(l) = x_prefix and Y = y."""
    prefix = np.asarray(x_prefix, dtype=float).ravel()
    l = prefix.size
    if np.any(prefix < 0) or np.any(prefix > np.asarray(problem.bounds[:l])):
        raise InvalidParameterError("prefix lies outside the search box")
    sigma = settings.sigma_err if sigma is None else sigma
    F, _ = _prefix_samples(prefix, problem, settings.n_mc, rng)
    return float(np.mean(kernel_delta(F - y, sigma))) / problem.volume(l)


def conditional_cdf(x_l, x_prefix, y: float, problem: SnisProblem, settings: SamplerSettings,
                    rng: np.random.Generator, sigma: float | None = None, density: float | None = None,
                    method: str = "indicator"):
    """CDF of the next coordinate given the prefix and Y = y, evaluated at ``x_l``.

    Both methods estimate ``|B_(l+1)|^-1 int_0^x_l int delta(F(prefix, t, rest) - y) d rest dt``
    divided by the prefix density:

    * ``"scaled"`` substitutes ``t = x_l u`` and draws fresh ``u`` per call, so each
      ``x_l`` sees different samples;
    * ``"indicator"`` draws ``t`` uniform on ``[0, b_l]`` once and weights the samples with
      ``t <= x_l``. The result is nondecreasing in ``x_l`` by construction.
    """
    prefix = np.asarray(x_prefix, dtype=float).ravel()
    l = prefix.size
    sigma = settings.sigma_err if sigma is None else sigma
    if density is None:
        density = joint_density(prefix, y, problem, settings, rng, sigma)
    if density <= settings.eps(problem):
        raise InfeasibleError(f"joint density {density:.3g} at prefix {prefix.tolist()} is below threshold")
    xs = np.atleast_1d(np.asarray(x_l, dtype=float))
    if np.any(xs < 0) or np.any(xs > problem.bounds[l]):
        raise InvalidParameterError(f"x_l must lie in [0, {problem.bounds[l]}]")
    if method == "scaled":
        means = _conditional_kernel_means(prefix, xs, y, sigma, problem, settings.n_mc, rng)
        G = xs * means / problem.volume(l + 1) / density
    elif method == "indicator":
        F, X = _prefix_samples(prefix, problem, settings.n_mc, rng)
        G = _indicator_cdf(kernel_delta(F - y, sigma), X[:, l], xs) / problem.volume(l) / density
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(G[0]) if np.ndim(x_l) == 0 else G


def _indicator_cdf(w, t, xs) -> np.ndarray:
    """(1/n) sum_i w_i [t_i <= x] for each x in xs."""
    order = np.argsort(t)
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    return cum[np.searchsorted(t[order], xs, side="right")] / w.size


def non_inversion_sample(G, b_l: float, V: float, n_trap: int = 100) -> float:
    """Trapezoidal evaluation of b_l * int_0^1 H(V - G(b_l u)) du, with H(0) = 0.

    ``G`` is either a vectorized callable or its values on ``b_l * linspace(0, 1, n_trap)``.
    """
    u = np.linspace(0.0, 1.0, n_trap)
    Gv = np.asarray(G(b_l * u) if callable(G) else G, dtype=float)
    if Gv.shape != u.shape:
        raise InvalidParameterError(f"need {n_trap} CDF values, got shape {Gv.shape}")
    if not Gv[-1] > 0:
        raise InfeasibleError("conditional CDF carries no mass on [0, b_l]")
    if V < 0 or V > Gv[-1] * (1 + 1e-12):
        raise InvalidParameterError(f"V = {V} is outside [0, G(b_l) = {Gv[-1]}]")
    h = (V - Gv > 0).astype(float)
    return float(b_l * trapezoid(h, u))


# -- Algorithm ------------------------------------------------------------------------

def _choose_sigma(F, y, settings, eps, vol):
    """(sigma, density, ess) for the current prefix, or None when infeasible.

    Feasibility is always judged at ``sigma_err``; a wider kernel would let targets
    outside the range of F through. Annealing only widens the kernel used for the
    conditional CDF when too few samples carry weight at ``sigma_err``.
    """
    w = kernel_delta(F - y, settings.sigma_err)
    dens = float(np.mean(w)) / vol
    if not dens > eps:
        return None
    picked = (settings.sigma_err, dens, _ess(w))
    if settings.anneal and picked[2] < settings.min_ess:
        for s in settings.sigmas()[-2::-1]:
            w = kernel_delta(F - y, s)
            picked = (s, float(np.mean(w)) / vol, _ess(w))
            if picked[2] >= settings.min_ess:
                break
    return picked


def snis_solve(problem: SnisProblem, settings: SamplerSettings, rng: np.random.Generator) -> SnisSolution:
    """Draw one solution of F(x) = y, one coordinate at a time.

    Each step draws n_mc points (prefix, B_rest U). Their kernel weights give the prefix
    density (feasibility test), and the same weighted points give the conditional CDF
    of the next coordinate on the trapezoid grid.
    """
    L, y = problem.L, problem.target
    eps = settings.eps(problem)
    u = np.linspace(0.0, 1.0, settings.n_trap)
    x_hat: list[float] = []
    steps: list[StepDiagnostics] = []
    for l in range(L):
        prefix = np.asarray(x_hat)
        F, X = _prefix_samples(prefix, problem, settings.n_mc, rng)
        vol = problem.volume(l)
        picked = _choose_sigma(F, y, settings, eps, vol)
        if picked is None:
            w = kernel_delta(F - y, settings.sigma_err)
            steps.append(StepDiagnostics(l, float(np.mean(w)) / vol, settings.sigma_err, _ess(w)))
            return SnisSolution(x_hat=prefix, achieved=float("nan"), feasible=False,
                                failed_at=l, steps=steps)
        sigma, dens, ess = picked
        b_l = problem.bounds[l]
        G = _indicator_cdf(kernel_delta(F - y, sigma), X[:, l], b_l * u) / vol / dens
        step = StepDiagnostics(l, dens, sigma, ess, G_b=float(G[-1]))
        steps.append(step)
        V = float(rng.uniform(0.0, settings.v_clamp * G[-1]))
        x_l = non_inversion_sample(G, b_l, V, settings.n_trap)
        step.V, step.x = V, x_l
        x_hat.append(x_l)
    x = np.asarray(x_hat)
    return SnisSolution(x_hat=x, achieved=float(problem(x[None, :])[0]), feasible=True, steps=steps)
