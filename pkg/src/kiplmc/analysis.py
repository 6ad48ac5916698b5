"""Metrics, theory-bound evaluators and the rescaled (single underdamped system) view
of the particle system."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .integrators import ParticleState, particle_sum
from .models import Model


@dataclass
class MetricReport:
    tail_variance: np.ndarray
    rmse_to_target: Optional[float] = None
    abc: Optional[float] = None
    diverged: bool = False
    n_steps_used: int = 0


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmse_to_target(trajectories, theta_star, at_step: int = -1, return_excluded: bool = False):
    """Root mean squared distance of theta to ``theta_star`` across replicates.

    This is the W2 distance between the empirical law of theta at ``at_step`` and the
    Dirac mass at ``theta_star``.  ``trajectories`` is a sequence of ``(T, d)``
    arrays (one per replicate) or an array ``(R, T, d)``.  Replicates that are
    non-finite at that step, or too short to reach it, are excluded.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    points, excluded = [], 0
    for traj in trajectories:
        traj = np.asarray(traj, dtype=float)
        if traj.ndim == 1:
            traj = traj[:, None]
        try:
            row = traj[at_step]
        except IndexError:
            excluded += 1
            continue
        if np.all(np.isfinite(row)):
            points.append(row)
        else:
            excluded += 1
    if not points:
        raise ValueError("no finite replicate reaches the requested step")
    sq = np.sum((np.asarray(points) - theta_star) ** 2, axis=1)
    value = float(np.sqrt(np.mean(sq)))
    return (value, excluded) if return_excluded else value


def error_curve(trajectories, theta_star) -> np.ndarray:
    """Per-step RMSE over replicates for equal-length ``(R, T, d)`` trajectories."""
    t = np.asarray(trajectories, dtype=float)
    sq = np.sum((t - np.asarray(theta_star, dtype=float)) ** 2, axis=-1)
    return np.sqrt(np.mean(sq, axis=0))


def tail_variance(trajectory, window: int = 500) -> np.ndarray:
    """Unbiased per-coordinate variance over the last ``window`` rows.

    Windows containing non-finite values report ``inf`` for every coordinate.
    """
    t = np.asarray(trajectory, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if window < 2 or t.shape[0] < window:
        raise ValueError(f"trajectory of length {t.shape[0]} shorter than window {window}")
    tail = t[-window:]
    if not np.all(np.isfinite(tail)):
        return np.full(t.shape[1], np.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        var = tail.var(axis=0, ddof=1)
    return np.where(np.isfinite(var), var, np.inf)


def abc_weights(m: int) -> np.ndarray:
    i = np.arange(1, m + 1, dtype=float)
    return 2.0 / (m * (m + 1)) * (i / m)


def abc_metric(errors_reference, errors_candidate) -> float:
    """Weighted signed area between two error curves.

    Positive when the candidate curve lies below the reference (candidate better).
    Non-finite reference errors (a diverged reference) are treated as +inf, so a
    finite candidate then scores +inf.
    """
    ref = np.asarray(errors_reference, dtype=float)
    cand = np.asarray(errors_candidate, dtype=float)
    if ref.shape != cand.shape or ref.ndim != 1 or ref.size < 1:
        raise ValueError("error series must be 1-D with equal length")
    ref = np.where(np.isnan(ref), np.inf, ref)
    cand = np.where(np.isnan(cand), np.inf, cand)
    with np.errstate(invalid="ignore"):
        diff = ref - cand
    diff = np.where(np.isnan(diff), 0.0, diff)  # inf - inf: both diverged
    return float(np.sum(abc_weights(ref.size) * diff))


# ---------------------------------------------------------------------------
# Rescaled coordinates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RescaledState:
    z: np.ndarray
    v: np.ndarray
    gamma_tilde: float
    eta_tilde: float


def to_rescaled(state: ParticleState, gamma: float, eta: float) -> RescaledState:
    """theta, N^{-1/2} X and sqrt(N) V_theta, V_x stacked; gamma -> sqrt(N) gamma,
    eta -> eta / sqrt(N)."""
    n = state.n_particles
    rn = math.sqrt(n)
    lead = state.theta.shape[:-1]
    z = np.concatenate([state.theta, (state.latents / rn).reshape(lead + (-1,))], axis=-1)
    v = np.concatenate([state.v_theta * rn, state.v_latents.reshape(lead + (-1,))], axis=-1)
    return RescaledState(z, v, rn * gamma, eta / rn)


def from_rescaled(rs: RescaledState, N: int, d_theta: int) -> ParticleState:
    rn = math.sqrt(N)
    lead = rs.z.shape[:-1]
    d_x = (rs.z.shape[-1] - d_theta) // N
    theta = rs.z[..., :d_theta].copy()
    latents = rs.z[..., d_theta:].reshape(lead + (N, d_x)) * rn
    v_theta = rs.v[..., :d_theta] / rn
    v_latents = rs.v[..., d_theta:].reshape(lead + (N, d_x)).copy()
    return ParticleState(theta, latents, v_theta, v_latents)


def _split(model: Model, z: np.ndarray, N: int):
    d = model.spec.d_theta
    theta = z[..., :d]
    zs = z[..., d:].reshape(z.shape[:-1] + (N, model.spec.d_x))
    return theta, zs


def bar_u_n(model: Model, z: np.ndarray, N: int) -> float:
    """(1/N) sum_i U(theta, sqrt(N) z_i) at the stacked point z = (theta, z_1..z_N)."""
    theta, zs = _split(model, np.asarray(z, dtype=float), N)
    vals = model.potential(theta[..., None, :], math.sqrt(N) * zs)
    return np.mean(vals, axis=-1)


def grad_bar_u_n(model: Model, z: np.ndarray, N: int) -> np.ndarray:
    theta, zs = _split(model, np.asarray(z, dtype=float), N)
    g_th, g_x = model.particle_grads(theta, math.sqrt(N) * zs)
    lead = theta.shape[:-1]
    return np.concatenate([particle_sum(g_th) / N,
                           (g_x / math.sqrt(N)).reshape(lead + (-1,))], axis=-1)


# ---------------------------------------------------------------------------
# Theory bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryBoundParams:
    mu: float
    lip: float
    gamma: float
    eta: float
    N: int
    d_theta: int
    d_x: int
    init_moment: float

    def __post_init__(self):
        vals = (self.mu, self.lip, self.gamma, self.eta, self.N, self.d_theta, self.d_x)
        if min(vals) <= 0 or self.init_moment < 0:
            raise ValueError("bound parameters must be positive")
        if self.mu > self.lip:
            raise ValueError("mu must not exceed lip")

    @property
    def kiplmc1_in_regime(self) -> bool:
        return (self.gamma >= math.sqrt(self.mu + self.lip)
                and self.eta <= self.mu / (4 * self.gamma * self.lip))

    @property
    def kiplmc2_in_regime(self) -> bool:
        return (self.gamma >= 2 * math.sqrt(self.lip)
                and self.eta <= self.mu / (33 * self.gamma**3))


def concentration_bound(mu: float, d_theta: int, N: int) -> float:
    if mu <= 0 or d_theta <= 0 or N <= 0:
        raise ValueError("inputs must be positive")
    return math.sqrt(2 * d_theta / (mu * N))


def bound_kiplmc1(p: TheoryBoundParams, n):
    """Three-term W2 error bound for KIPLMC1 after ``n`` steps (scalar or array)."""
    n = np.asarray(n, dtype=float)
    rate = 1 - 3 * p.mu * p.eta / (4 * p.gamma)
    out = (math.sqrt(2) * rate**n * p.init_moment
           + math.sqrt(2) * p.lip * p.eta / p.mu * math.sqrt((p.d_theta + p.N * p.d_x) / p.N)
           + concentration_bound(p.mu, p.d_theta, p.N))
    return float(out) if out.ndim == 0 else out


def kiplmc2_constants(p: TheoryBoundParams) -> tuple[float, float]:
    """(C, K) of the KIPLMC2 bound."""
    sl = math.sqrt(p.lip)
    c = math.sqrt(3) * max(sl, 1 / sl)
    L, eta = p.lip, p.eta
    k = L * (1 + math.exp(L * eta**2) * (eta / 6 + eta**2 * L / 24)) \
        * (1 + eta * L / (2 * math.sqrt(p.mu)))
    return c, k


def bound_kiplmc2(p: TheoryBoundParams, n):
    n = np.asarray(n, dtype=float)
    c, k = kiplmc2_constants(p)
    rate = 1 - p.eta * p.mu / (3 * p.gamma)
    out = (c * (rate ** (n / 2) * p.init_moment
                + p.eta * math.sqrt(2 * (p.N * p.d_x + p.d_theta)) * 6 * p.gamma * k / p.mu)
           + concentration_bound(p.mu, p.d_theta, p.N))
    return float(out) if out.ndim == 0 else out


def gaussian_init_moment(model, N: int, theta0=None, x0=None) -> float:
    """(E||Z_0 - Z*||^2)^{1/2} for a point-mass start on the Gaussian hierarchical model.

    Z_0 = (theta0, N^{-1/2} x0, ...) and Z* is drawn independently from the rescaled
    stationary law (an upper bound on the coupling infimum).  Under that law theta is
    N(y, s^2/N I) with s^2 = sigma_x^2 + sigma_y^2, and X_i | theta is N(m(theta), v I)
    with m = (sigma_y^2 theta + sigma_x^2 y)/s^2 and v = sigma_x^2 sigma_y^2 / s^2.
    The N latent blocks each carry weight 1/N after rescaling, so they contribute a
    single-particle second moment.
    """
    y = np.atleast_1d(np.asarray(model.y, dtype=float))
    d = y.size
    sx2, sy2 = model.sigma_x**2, model.sigma_y**2
    s2 = sx2 + sy2
    th0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    var_theta = s2 / N
    theta_term = np.sum((th0 - y) ** 2) + d * var_theta
    w = sy2 / s2
    var_x = sx2 * sy2 / s2 + w**2 * var_theta
    latent_term = np.sum((x0 - y) ** 2) + d * var_x
    return math.sqrt(theta_term + latent_term)


def rescaled_assumption_estimates(model: Model, N: int, n_points: int = 10, scale: float = 1.0,
                                  seed: int = 0, h: float = 1e-5) -> dict:
    """Curvature range of the averaged potential from finite-difference Hessians.

    Points are drawn in original coordinates (theta and every particle i.i.d.
    N(0, scale^2 I), a law that does not depend on N) and mapped to the stacked
    rescaled space.  Returns the smallest and largest Hessian eigenvalue seen, which
    estimate the strong convexity and Lipschitz constants of the averaged potential.
    Uniform random pairs are avoided on purpose: in high dimension their difference
    quotients concentrate at the mean eigenvalue and drift with N.
    """
    d_theta, d_x = model.spec.d_theta, model.spec.d_x
    dim = d_theta + N * d_x
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    for _ in range(n_points):
        theta = scale * rng.standard_normal(d_theta)
        x = scale * rng.standard_normal((N, d_x))
        z = np.concatenate([theta, (x / math.sqrt(N)).ravel()])
        steps = h * np.eye(dim)
        cols = (grad_bar_u_n(model, z + steps, N) - grad_bar_u_n(model, z - steps, N)) / (2 * h)
        hess = 0.5 * (cols + cols.T)
        eig = np.linalg.eigvalsh(hess)
        lo, hi = min(lo, eig[0]), max(hi, eig[-1])
    return {"mu_est": float(lo), "lip_est": float(hi)}
