"""Particle-system integrators: KIPLMC1, KIPLMC2, IPLA, PGD, MPGDnc and a fine-step
Euler-Maruyama reference of the kinetic interacting particle diffusion.

State arrays carry optional leading batch axes, so ``theta`` is ``(..., d_theta)`` and
``latents`` is ``(..., N, d_x)``.  A batch of independent replicates is stepped in one
call by giving every array the same leading shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .models import Model

ALGORITHMS = ("KIPLMC1", "KIPLMC2", "IPLA", "PGD", "MPGDNC")
KINETIC = frozenset({"KIPLMC1", "KIPLMC2", "MPGDNC"})

_SERIES_CUTOFF = 0.1
_SERIES_TERMS = 24


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------

def _series(x: float, coef) -> float:
    total, term = 0.0, 1.0
    for k in range(1, _SERIES_TERMS + 1):
        term *= x / k
        total += coef(k) * term
    return total


def psi0(gamma: float, t: float) -> float:
    return math.exp(-gamma * t)


def psi1(gamma: float, t: float) -> float:
    """int_0^t e^{-gamma s} ds."""
    return -math.expm1(-gamma * t) / gamma


def psi2(gamma: float, t: float) -> float:
    """int_0^t psi1(s) ds = (t - psi1(t)) / gamma."""
    x = gamma * t
    if x < _SERIES_CUTOFF:
        # x - (1 - e^{-x}) = sum_{k>=2} (-1)^k x^k / k!
        return _series(x, lambda k: 0.0 if k < 2 else (-1.0) ** k) / gamma**2
    return (t - psi1(gamma, t)) / gamma


def covariance_matrix(gamma: float, eta: float) -> np.ndarray:
    """Closed form of int_0^eta [[psi0^2, psi0 psi1], [psi0 psi1, psi1^2]] dt."""
    x = gamma * eta
    a = -math.expm1(-x)
    c11 = -math.expm1(-2 * x) / (2 * gamma)
    c12 = a * a / (2 * gamma**2)
    if x < _SERIES_CUTOFF:
        # x - 2(1 - e^{-x}) + (1 - e^{-2x})/2 = sum_{k>=3} (-1)^{k+1} (2^{k-1} - 2) x^k / k!
        f = _series(x, lambda k: 0.0 if k < 3 else (-1.0) ** (k + 1) * (2.0 ** (k - 1) - 2.0))
    else:
        f = x - 2 * a - math.expm1(-2 * x) / 2
    c22 = f / gamma**3
    return np.array([[c11, c12], [c12, c22]])


@dataclass(frozen=True)
class KineticCoefficients:
    gamma: float
    eta: float
    psi0: float
    psi1: float
    psi2: float
    cov: np.ndarray
    cov_factor: np.ndarray
    delta: float


def kinetic_coefficients(gamma: float, eta: float) -> KineticCoefficients:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not eta > 0:
        raise ValueError("eta must be positive")
    cov = covariance_matrix(gamma, eta)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        factor = np.linalg.cholesky(cov + 1e-16 * np.trace(cov) / 2 * np.eye(2))
    return KineticCoefficients(
        gamma=float(gamma), eta=float(eta), psi0=psi0(gamma, eta), psi1=psi1(gamma, eta),
        psi2=psi2(gamma, eta), cov=cov, cov_factor=factor, delta=math.exp(-eta * gamma / 2))


# ---------------------------------------------------------------------------
# State and noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleState:
    theta: np.ndarray
    latents: np.ndarray
    v_theta: np.ndarray
    v_latents: np.ndarray
    step_index: int = 0
    # particle gradients evaluated at (theta, latents), reused by the next step
    grads: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def n_particles(self) -> int:
        return self.latents.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.theta.shape[:-1]

    def finite_mask(self) -> np.ndarray:
        """Per-replicate flag: True while every entry is finite."""
        ok = np.isfinite(self.theta).all(axis=-1) & np.isfinite(self.v_theta).all(axis=-1)
        ok &= np.isfinite(self.latents).all(axis=(-2, -1))
        ok &= np.isfinite(self.v_latents).all(axis=(-2, -1))
        return ok

    @property
    def diverged(self) -> bool:
        return not bool(np.all(self.finite_mask()))

    def take(self, index) -> "ParticleState":
        """Select replicates along the leading batch axis."""
        return ParticleState(self.theta[index], self.latents[index], self.v_theta[index],
                             self.v_latents[index], self.step_index)


class NoiseSource(Protocol):
    def draw(self, theta_shape: tuple, latent_shape: tuple) -> tuple[np.ndarray, np.ndarray]:
        """Return two i.i.d. standard normal draws per coordinate.

        Shapes are ``(2,) + theta_shape`` and ``(2,) + latent_shape``.
        """


class GaussianNoise:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def draw(self, theta_shape, latent_shape):
        return (self.rng.standard_normal((2,) + tuple(theta_shape)),
                self.rng.standard_normal((2,) + tuple(latent_shape)))


class StackedGaussianNoise:
    """One generator per replicate; replicate r owns slot r of the leading batch axis."""

    def __init__(self, rngs: Sequence[np.random.Generator]):
        self.rngs = list(rngs)

    def draw(self, theta_shape, latent_shape):
        out_th = np.empty((2,) + tuple(theta_shape))
        out_lat = np.empty((2,) + tuple(latent_shape))
        # per generator the draw order is (theta, latent), as in GaussianNoise
        for r, g in enumerate(self.rngs):
            out_th[:, r] = g.standard_normal((2,) + tuple(theta_shape[1:]))
            out_lat[:, r] = g.standard_normal((2,) + tuple(latent_shape[1:]))
        return out_th, out_lat


class ZeroNoise:
    def draw(self, theta_shape, latent_shape):
        return np.zeros((2,) + tuple(theta_shape)), np.zeros((2,) + tuple(latent_shape))


class ReplayNoise:
    """Serves pre-computed draws in order; used for coupling and oracle tests."""

    def __init__(self, draws):
        self._it = iter(draws)

    def draw(self, theta_shape, latent_shape):
        th, lat = next(self._it)
        return np.asarray(th, dtype=float), np.asarray(lat, dtype=float)


class RecordingNoise:
    """Wraps a source and keeps every draw, so a run can be replayed exactly."""

    def __init__(self, source):
        self.source = source
        self.draws = []

    def draw(self, theta_shape, latent_shape):
        out = self.source.draw(theta_shape, latent_shape)
        self.draws.append(out)
        return out


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def particle_sum(g: np.ndarray) -> np.ndarray:
    """Sum over the particle axis (-2) in index order.

    A prefix sum fixes the reduction order independently of array layout and batch
    shape, which keeps batched and single-replicate runs bitwise identical.
    """
    return np.cumsum(g, axis=-2)[..., -1, :]


def _grads(state: ParticleState, model: Model):
    if state.grads is not None:
        return state.grads
    return model.particle_grads(state.theta, state.latents)


def _correlated_pair(coeffs: KineticCoefficients, xi: np.ndarray):
    f = coeffs.cov_factor
    return f[0, 0] * xi[0], f[1, 0] * xi[0] + f[1, 1] * xi[1]


def kiplmc1_step(state: ParticleState, model: Model, coeffs: KineticCoefficients, noise,
                 theta_noise: bool = True) -> ParticleState:
    """Exponential-integrator step of the kinetic particle system.

    The noise pair (eps, eps') per coordinate is ``cov_factor @ (g1, g2)``: eps drives
    the momentum and eps' the position, with joint covariance ``coeffs.cov``.
    """
    n = state.n_particles
    g_th, g_x = _grads(state, model)
    mean_g_th = particle_sum(g_th) / n
    xi_th, xi_x = noise.draw(state.theta.shape, state.latents.shape)
    e_th, ep_th = _correlated_pair(coeffs, xi_th)
    e_x, ep_x = _correlated_pair(coeffs, xi_x)
    c_th = math.sqrt(2 * coeffs.gamma / n) if theta_noise else 0.0
    c_x = math.sqrt(2 * coeffs.gamma)
    p0, p1, p2 = coeffs.psi0, coeffs.psi1, coeffs.psi2
    return ParticleState(
        theta=state.theta + p1 * state.v_theta - p2 * mean_g_th + c_th * ep_th,
        latents=state.latents + p1 * state.v_latents - p2 * g_x + c_x * ep_x,
        v_theta=p0 * state.v_theta - p1 * mean_g_th + c_th * e_th,
        v_latents=p0 * state.v_latents - p1 * g_x + c_x * e_x,
        step_index=state.step_index + 1,
    )


def mpgdnc_step(state: ParticleState, model: Model, coeffs: KineticCoefficients,
                noise) -> ParticleState:
    """KIPLMC1 with both theta-noise terms removed (momentum particle gradient descent
    without gradient correction).  Theta noise is still drawn so random streams stay
    aligned with KIPLMC1."""
    return kiplmc1_step(state, model, coeffs, noise, theta_noise=False)


def kiplmc2_step(state: ParticleState, model: Model, coeffs: KineticCoefficients,
                 noise) -> ParticleState:
    """OBABO splitting step.  Gradients at the new positions are cached on the result."""
    n = state.n_particles
    eta, delta = coeffs.eta, coeffs.delta
    s = math.sqrt(-math.expm1(-eta * coeffs.gamma))  # sqrt(1 - delta^2)
    g_th, g_x = _grads(state, model)
    xi_th, xi_x = noise.draw(state.theta.shape, state.latents.shape)
    rn = 1.0 / math.sqrt(n)

    # O + B
    vh_th = delta * state.v_theta + rn * s * xi_th[0] - eta / (2 * n) * particle_sum(g_th)
    vh_x = delta * state.v_latents + s * xi_x[0] - eta / 2 * g_x
    # A
    theta = state.theta + eta * vh_th
    latents = state.latents + eta * vh_x
    # B + O
    g_th1, g_x1 = model.particle_grads(theta, latents)
    v_th = delta * (vh_th - eta / (2 * n) * particle_sum(g_th1)) + rn * s * xi_th[1]
    v_x = delta * (vh_x - eta / 2 * g_x1) + s * xi_x[1]
    return ParticleState(theta, latents, v_th, v_x, state.step_index + 1, grads=(g_th1, g_x1))


def ipla_step(state: ParticleState, model: Model, eta: float, noise,
              theta_noise: bool = True) -> ParticleState:
    """Euler-Maruyama step of the overdamped interacting particle Langevin system."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    n = state.n_particles
    g_th, g_x = _grads(state, model)
    xi_th, xi_x = noise.draw(state.theta.shape, state.latents.shape)
    c_th = math.sqrt(2 * eta / n) if theta_noise else 0.0
    theta = state.theta - eta / n * particle_sum(g_th) + c_th * xi_th[0]
    latents = state.latents - eta * g_x + math.sqrt(2 * eta) * xi_x[0]
    return ParticleState(theta, latents, np.zeros_like(theta), np.zeros_like(latents),
                         state.step_index + 1)


def pgd_step(state: ParticleState, model: Model, eta: float, noise) -> ParticleState:
    """IPLA without theta noise (particle gradient descent)."""
    return ipla_step(state, model, eta, noise, theta_noise=False)


def make_stepper(algorithm: str, model: Model, gamma: float, eta: float):
    """Bind an algorithm name to a ``step(state, noise) -> state`` closure."""
    algorithm = algorithm.upper()
    if algorithm in KINETIC:
        coeffs = kinetic_coefficients(gamma, eta)
        fn = {"KIPLMC1": kiplmc1_step, "KIPLMC2": kiplmc2_step, "MPGDNC": mpgdnc_step}[algorithm]
        return lambda state, noise: fn(state, model, coeffs, noise)
    if algorithm == "IPLA":
        return lambda state, noise: ipla_step(state, model, eta, noise)
    if algorithm == "PGD":
        return lambda state, noise: pgd_step(state, model, eta, noise)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def initialize_state(d_theta: int, d_x: int, N: int, theta0=None, x0_mode: str = "PointMass",
                     seed=0, x0=None, overdamped: bool = False,
                     batch_shape: tuple = ()) -> ParticleState:
    """Positions at a point mass (``theta0``, ``x0``; origin by default) or i.i.d. standard
    normal around it; momenta i.i.d. standard normal, or zero for overdamped schemes."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch_shape = tuple(batch_shape)
    theta = np.zeros(batch_shape + (d_theta,))
    latents = np.zeros(batch_shape + (N, d_x))
    if theta0 is not None:
        theta = theta + np.asarray(theta0, dtype=float)
    if x0 is not None:
        latents = latents + np.asarray(x0, dtype=float)
    if x0_mode == "Gaussian":
        theta = theta + rng.standard_normal(theta.shape)
        latents = latents + rng.standard_normal(latents.shape)
    elif x0_mode != "PointMass":
        raise ValueError(f"unknown x0_mode {x0_mode!r}")
    if overdamped:
        v_theta, v_latents = np.zeros_like(theta), np.zeros_like(latents)
    else:
        v_theta = rng.standard_normal(theta.shape)
        v_latents = rng.standard_normal(latents.shape)
    return ParticleState(theta, latents, v_theta, v_latents, 0)


# ---------------------------------------------------------------------------
# Continuous-time reference
# ---------------------------------------------------------------------------

def kipld_em_step(state: ParticleState, model: Model, gamma: float, h: float,
                  db_theta: np.ndarray, db_latents: np.ndarray) -> ParticleState:
    """Naive Euler-Maruyama step of the diffusion given Brownian increments (variance h)."""
    n = state.n_particles
    g_th, g_x = model.particle_grads(state.theta, state.latents)
    v_th = (state.v_theta - h * (gamma * state.v_theta + particle_sum(g_th) / n)
            + math.sqrt(2 * gamma / n) * db_theta)
    v_x = (state.v_latents - h * (gamma * state.v_latents + g_x)
           + math.sqrt(2 * gamma) * db_latents)
    return ParticleState(state.theta + h * state.v_theta, state.latents + h * state.v_latents,
                         v_th, v_x, state.step_index + 1)


def reference_kipld_simulate(initial: ParticleState, model: Model, gamma: float,
                             total_time: float, fine_eta: float = 1e-4, seed=0) -> ParticleState:
    """Fine-step Euler-Maruyama simulation of the kinetic diffusion up to ``total_time``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_steps = int(round(total_time / fine_eta))
    sq = math.sqrt(fine_eta)
    state = initial
    for _ in range(n_steps):
        db_th = sq * rng.standard_normal(state.theta.shape)
        db_x = sq * rng.standard_normal(state.latents.shape)
        state = kipld_em_step(state, model, gamma, fine_eta, db_th, db_x)
    return state


class _CoarseTrack:
    """Accumulates the coarse-scheme noise integrals from fine Brownian increments."""

    def __init__(self, algorithm, model, initial, gamma, eta, fine_eta):
        self.algorithm = algorithm.upper()
        if self.algorithm not in ("KIPLMC1", "KIPLMC2"):
            raise ValueError("coupling is defined for KIPLMC1 and KIPLMC2")
        self.m = int(round(eta / fine_eta))
        if self.m < 2 or abs(self.m * fine_eta - eta) > 1e-9 * eta or self.m % 2:
            raise ValueError("eta must be an even multiple of fine_eta")
        self.coeffs = kinetic_coefficients(gamma, eta)
        self.stepper = make_stepper(self.algorithm, model, gamma, eta)
        self.state = initial
        self.gamma, self.eta, self.h = gamma, eta, fine_eta
        self._reset()

    def _reset(self):
        self.k = 0
        self.acc = None

    def _weights(self, k):
        g, h, eta = self.gamma, self.h, self.eta
        mid = (k + 0.5) * h
        if self.algorithm == "KIPLMC1":
            return psi0(g, eta - mid), psi1(g, eta - mid)
        half = eta / 2
        norm = math.sqrt(2 * g / -math.expm1(-g * eta))
        if k < self.m // 2:
            return norm * math.exp(-g * (half - mid)), 0.0
        return 0.0, norm * math.exp(-g * (eta - mid))

    def feed(self, db_th, db_x):
        w0, w1 = self._weights(self.k)
        if self.acc is None:
            self.acc = [np.zeros((2,) + db_th.shape), np.zeros((2,) + db_x.shape)]
        for a, db in zip(self.acc, (db_th, db_x)):
            a[0] += w0 * db
            a[1] += w1 * db
        self.k += 1
        if self.k == self.m:
            draws = [self._to_standard(a) for a in self.acc]
            self.state = self.stepper(self.state, ReplayNoise([tuple(draws)]))
            self._reset()

    def _to_standard(self, a):
        if self.algorithm == "KIPLMC2":
            return a
        # invert (eps, eps') = cov_factor @ (g1, g2)
        f = self.coeffs.cov_factor
        g1 = a[0] / f[0, 0]
        return np.stack([g1, (a[1] - f[1, 0] * g1) / f[1, 1]])


def simulate_coupled(initial: ParticleState, model: Model, gamma: float, total_time: float,
                     coarse: Sequence[tuple[str, float]], fine_eta: float = 1e-4, seed=0):
    """Run the fine reference and coarse schemes driven by the same Brownian path.

    Returns ``(reference_state, {(algorithm, eta): coarse_state})``.  The coarse
    noise is assembled from the fine increments by midpoint quadrature of the exact
    stochastic integrals each scheme samples, so differences measure strong
    (pathwise) discretisation error.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tracks = {(a.upper(), eta): _CoarseTrack(a, model, initial, gamma, eta, fine_eta)
              for a, eta in coarse}
    n_steps = int(round(total_time / fine_eta))
    sq = math.sqrt(fine_eta)
    ref = initial
    for _ in range(n_steps):
        db_th = sq * rng.standard_normal(ref.theta.shape)
        db_x = sq * rng.standard_normal(ref.latents.shape)
        ref = kipld_em_step(ref, model, gamma, fine_eta, db_th, db_x)
        for t in tracks.values():
            t.feed(db_th, db_x)
    return ref, {k: t.state for k, t in tracks.items()}
