"""Latent variable models exposed through the potential U(theta, x) = -log p_theta(x, y).

Every model works on broadcast arrays: ``theta`` has shape ``(..., d_theta)`` and
``x`` has shape ``(..., d_x)``.  The integrators rely on this to evaluate all
particles (and optionally a stack of independent replicates) in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit


class DimensionError(ValueError):
    """Raised when array shapes do not match the model dimensions."""


@dataclass(frozen=True)
class ModelSpec:
    d_theta: int
    d_x: int
    d_y: int
    mu_hint: Optional[float] = None
    lip_hint: Optional[float] = None
    theta_star: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.d_theta < 1 or self.d_x < 1:
            raise ValueError("d_theta and d_x must be positive")
        if self.d_y < 0:
            raise ValueError("d_y must be nonnegative")
        if self.mu_hint is not None and self.lip_hint is not None:
            if self.mu_hint > self.lip_hint:
                raise ValueError("mu_hint must not exceed lip_hint")


class Model:
    """Base class.  Subclasses implement the ``_potential`` / ``_grad_*`` hooks."""

    spec: ModelSpec

    def _check(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.spec.d_theta:
            raise DimensionError(
                f"theta has trailing dimension {theta.shape[-1:]} , expected {self.spec.d_theta}")
        if x.ndim == 0 or x.shape[-1] != self.spec.d_x:
            raise DimensionError(
                f"x has trailing dimension {x.shape[-1:]}, expected {self.spec.d_x}")
        return theta, x

    def potential(self, theta, x):
        theta, x = self._check(theta, x)
        out = self._potential(theta, x)
        return float(out) if np.ndim(out) == 0 else out

    def grad_theta(self, theta, x) -> np.ndarray:
        theta, x = self._check(theta, x)
        return self._grad_theta(theta, x)

    def grad_x(self, theta, x) -> np.ndarray:
        theta, x = self._check(theta, x)
        return self._grad_x(theta, x)

    def particle_grads(self, theta: np.ndarray, latents: np.ndarray):
        """Gradients for every particle.

        Args:
            theta: shape ``(..., d_theta)``.
            latents: shape ``(..., N, d_x)``.

        Returns:
            ``(g_theta, g_x)`` with shapes ``(..., N, d_theta)`` and ``(..., N, d_x)``.
        """
        th = theta[..., None, :]
        return self._grad_theta(th, latents), self._grad_x(th, latents)

    def joint_grad(self, z: np.ndarray) -> np.ndarray:
        """Full gradient of U at the stacked point ``z = (theta, x)``."""
        d = self.spec.d_theta
        theta, x = z[..., :d], z[..., d:]
        return np.concatenate(
            [np.broadcast_to(self.grad_theta(theta, x), theta.shape),
             np.broadcast_to(self.grad_x(theta, x), x.shape)], axis=-1)


class FreeParticleModel(Model):
    """U identically zero.  Used to isolate the momentum and noise parts of a scheme."""

    def __init__(self, d_theta: int = 1, d_x: int = 1):
        self.spec = ModelSpec(d_theta=d_theta, d_x=d_x, d_y=0)

    def _potential(self, theta, x):
        return np.zeros(np.broadcast_shapes(theta.shape[:-1], x.shape[:-1]))

    def _grad_theta(self, theta, x):
        shape = np.broadcast_shapes(theta.shape[:-1], x.shape[:-1]) + (self.spec.d_theta,)
        return np.zeros(shape)

    def _grad_x(self, theta, x):
        shape = np.broadcast_shapes(theta.shape[:-1], x.shape[:-1]) + (self.spec.d_x,)
        return np.zeros(shape)


class GaussianHierarchicalModel(Model):
    """x ~ N(theta, sigma_x^2 I), y | x ~ N(x, sigma_y^2 I) with d_theta = d_x = d_y.

    The marginal is y ~ N(theta, (sigma_x^2 + sigma_y^2) I), so the MMLE is y itself
    and the stationary theta-marginal of the particle system is
    N(y, (sigma_x^2 + sigma_y^2) / N * I).
    """

    def __init__(self, y, sigma_x: float = 1.0, sigma_y: float = 1.0):
        if sigma_x <= 0 or sigma_y <= 0:
            raise ValueError("scales must be positive")
        self.y = np.atleast_1d(np.asarray(y, dtype=float)).copy()
        self.y.setflags(write=False)
        self.sigma_x = float(sigma_x)
        self.sigma_y = float(sigma_y)
        a, b = 1.0 / self.sigma_x**2, 1.0 / self.sigma_y**2
        # eigenvalues of the per-coordinate Hessian [[a, -a], [-a, a + b]]
        mid = a + b / 2
        disc = np.sqrt(a * a + b * b / 4)
        d = self.y.size
        self.spec = ModelSpec(d_theta=d, d_x=d, d_y=d, mu_hint=mid - disc, lip_hint=mid + disc,
                              theta_star=self.y)

    @property
    def marginal_variance(self) -> float:
        return self.sigma_x**2 + self.sigma_y**2

    @property
    def marginal_mu(self) -> float:
        """Strong log-concavity constant of theta -> p_theta(y)."""
        return 1.0 / self.marginal_variance

    def _potential(self, theta, x):
        return (np.sum((x - theta) ** 2, axis=-1) / (2 * self.sigma_x**2)
                + np.sum((self.y - x) ** 2, axis=-1) / (2 * self.sigma_y**2))

    def _grad_theta(self, theta, x):
        return -(x - theta) / self.sigma_x**2

    def _grad_x(self, theta, x):
        return (x - theta) / self.sigma_x**2 + (x - self.y) / self.sigma_y**2


class PriorMode(str, enum.Enum):
    VECTOR_MEAN = "VectorMean"
    SCALAR_MEAN_TIMES_ONES = "ScalarMeanTimesOnes"


SCALAR_MODE_PRIOR_VARIANCE = 5.0


class LogisticRegressionModel(Model):
    """Bayesian logistic regression with a Gaussian latent coefficient vector.

    ``VectorMean``: p_theta(x) = N(x; theta, sigma^2 I), d_theta = d_x.
    ``ScalarMeanTimesOnes``: p_theta(x) = N(x; theta * 1, 5 I), d_theta = 1.

    The potential drops the Gaussian normalising constant.
    """

    def __init__(self, covariates, responses, sigma: Optional[float] = None,
                 prior_mode: PriorMode | str = PriorMode.VECTOR_MEAN,
                 theta_true: Optional[np.ndarray] = None):
        v = np.atleast_2d(np.asarray(covariates, dtype=float)).copy()
        y = np.asarray(responses, dtype=float).ravel().copy()
        if v.shape[0] != y.size:
            raise DimensionError("covariates and responses disagree on d_y")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("responses must be 0/1")
        self.prior_mode = PriorMode(prior_mode)
        if self.prior_mode is PriorMode.SCALAR_MEAN_TIMES_ONES:
            fixed = np.sqrt(SCALAR_MODE_PRIOR_VARIANCE)
            if sigma is not None and not np.isclose(sigma, fixed):
                raise ValueError("ScalarMeanTimesOnes fixes the prior variance to 5")
            sigma = fixed
        elif sigma is None:
            sigma = 1.0
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        v.setflags(write=False)
        y.setflags(write=False)
        self.covariates = v
        self.responses = y
        self.sigma = float(sigma)
        self._half_cov = 0.5 * v
        self._half_cov_t = np.ascontiguousarray(self._half_cov.T)
        self._centred_pull = (y - 0.5) @ v
        self.theta_true = None if theta_true is None else np.asarray(theta_true, dtype=float)
        d_x = v.shape[1]
        d_theta = 1 if self.prior_mode is PriorMode.SCALAR_MEAN_TIMES_ONES else d_x
        self.spec = ModelSpec(d_theta=d_theta, d_x=d_x, d_y=v.shape[0],
                              lip_hint=self.lipschitz_bound())

    def lipschitz_bound(self) -> float:
        """Prior curvature plus (1/4) sum_j ||v_j||^2.

        The prior term is 2/sigma^2 for ``VectorMean`` and (d_x + 1)/sigma^2 for the
        scalar-mean model (largest eigenvalue of its constant prior Hessian).
        """
        d_x = self.covariates.shape[1]
        prior = 2.0 if self.prior_mode is PriorMode.VECTOR_MEAN else d_x + 1.0
        return prior / self.sigma**2 + 0.25 * float(np.sum(self.covariates**2))

    def _prior_mean(self, theta, x):
        if self.prior_mode is PriorMode.SCALAR_MEAN_TIMES_ONES:
            return np.broadcast_to(theta, theta.shape[:-1] + (self.spec.d_x,))
        return theta

    def _potential(self, theta, x):
        u = x @ self.covariates.T
        # -log s(u)^y (1 - s(u))^(1-y) = log(1 + e^u) - y u
        nll = np.sum(np.logaddexp(0.0, u) - self.responses * u, axis=-1)
        return np.sum((x - self._prior_mean(theta, x)) ** 2, axis=-1) / (2 * self.sigma**2) + nll

    def _grad_theta(self, theta, x):
        r = (x - self._prior_mean(theta, x)) / self.sigma**2
        if self.prior_mode is PriorMode.SCALAR_MEAN_TIMES_ONES:
            return -np.sum(r, axis=-1, keepdims=True)
        return -r

    def _grad_x(self, theta, x):
        # s(u) = (1 + tanh(u/2)) / 2 is overflow-free for either sign of u and lets the
        # constant half fold into a precomputed vector:
        # sum_j (y_j - s(u_j)) v_j = sum_j (y_j - 1/2) v_j - sum_j tanh(u_j/2) v_j / 2
        t = np.tanh(x @ self._half_cov_t)
        return (x - self._prior_mean(theta, x)) / self.sigma**2 - self._centred_pull + t @ self._half_cov


def generate_synthetic_logistic(d_x: int, d_y: int, theta_true, sigma: float, seed: int,
                                covariates: Optional[np.ndarray] = None) -> LogisticRegressionModel:
    """Draw a synthetic logistic-regression dataset.

    Covariate entries are i.i.d. N(0, 1) scaled by ``1/sqrt(d_x)`` unless ``covariates``
    is supplied.  A single latent ``x ~ N(theta_true, sigma^2 I)`` generates all
    responses ``y_j ~ Bernoulli(s(v_j^T x))``.
    """
    if d_y < 1 or d_x < 1:
        raise ValueError("d_x and d_y must be positive")
    theta_true = np.asarray(theta_true, dtype=float).ravel()
    if theta_true.size != d_x:
        raise DimensionError("theta_true must have d_x entries")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((d_y, d_x)) / np.sqrt(d_x)
    if covariates is not None:
        v = np.asarray(covariates, dtype=float)
        if v.shape != (d_y, d_x):
            raise DimensionError("covariates must have shape (d_y, d_x)")
    x = theta_true + sigma * rng.standard_normal(d_x)
    y = (rng.random(d_y) < expit(v @ x)).astype(float)
    return LogisticRegressionModel(v, y, sigma=sigma, theta_true=theta_true)


def check_assumptions(model: Model, n_pairs: int = 1000, radius: float = 1.0, seed: int = 0,
                      center: Optional[np.ndarray] = None) -> dict:
    """Random-pair estimates of the strong convexity and gradient Lipschitz constants.

    Pairs are drawn uniformly from a ball of ``radius`` around ``center`` (origin by
    default) in the joint (theta, x) space.  ``mu_est`` is the smallest observed
    <dz, dgrad>/|dz|^2 and ``lip_est`` the largest |dgrad|/|dz|; both are inner
    estimates of the true constants.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    dim = model.spec.d_theta + model.spec.d_x
    rng = np.random.default_rng(seed)
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def ball(n):
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return c + radius * g * rng.random((n, 1)) ** (1.0 / dim)

    z, zp = ball(n_pairs), ball(n_pairs)
    dz = z - zp
    dg = model.joint_grad(z) - model.joint_grad(zp)
    sq = np.sum(dz**2, axis=1)
    ok = sq > 0
    mu = np.sum(dz * dg, axis=1)[ok] / sq[ok]
    lip = np.linalg.norm(dg, axis=1)[ok] / np.sqrt(sq[ok])
    return {"mu_est": float(mu.min()), "lip_est": float(lip.max())}
