import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from kiplmc.integrators import (GaussianNoise, ParticleState, RecordingNoise, ReplayNoise,
                                StackedGaussianNoise, ZeroNoise, covariance_matrix,
                                initialize_state, ipla_step, kipld_em_step, kinetic_coefficients,
                                kiplmc1_step, kiplmc2_step, make_stepper, mpgdnc_step, pgd_step,
                                psi0, psi1, psi2, reference_kipld_simulate, simulate_coupled)
from kiplmc.models import FreeParticleModel, GaussianHierarchicalModel

GAMMAS = [0.5, 1.2, 5.0]
ETAS = [1e-3, 1e-2, 1e-1]


def _quad(f, a, b):
    return quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=200)[0]


# --- coefficients -----------------------------------------------------------

def test_psi_frozen_values():
    assert psi1(1.0, 1.0) == pytest.approx(0.6321205588285577, abs=1e-15)
    assert psi2(1.0, 1.0) == pytest.approx(0.36787944117144233, abs=1e-15)
    assert psi1(1.0, 1.0) == pytest.approx(_quad(lambda s: math.exp(-s), 0, 1), rel=1e-13)
    assert psi2(1.0, 1.0) == pytest.approx(_quad(lambda s: psi1(1.0, s), 0, 1), rel=1e-13)


def test_covariance_frozen_value():
    c = covariance_matrix(1.0, 0.1)
    assert c[0, 0] == pytest.approx((1 - math.exp(-0.2)) / 2, rel=1e-14)
    assert c[0, 0] == pytest.approx(0.0906346234610091, rel=1e-12)


@pytest.mark.parametrize("gamma", GAMMAS)
@pytest.mark.parametrize("eta", ETAS)
def test_covariance_matches_quadrature(gamma, eta):
    c = covariance_matrix(gamma, eta)
    entries = {
        (0, 0): lambda t: psi0(gamma, t) ** 2,
        (0, 1): lambda t: psi0(gamma, t) * psi1(gamma, t),
        (1, 1): lambda t: psi1(gamma, t) ** 2,
    }
    for (i, j), f in entries.items():
        ref = _quad(f, 0.0, eta)
        assert abs(c[i, j] - ref) <= 1e-10 * abs(ref)
    assert c[0, 1] == c[1, 0]


@pytest.mark.parametrize("gamma", GAMMAS)
def test_psi_derivative_identities(gamma):
    h = 1e-6
    for t in np.linspace(0.01, 2.0, 20):
        d1 = (psi1(gamma, t + h) - psi1(gamma, t - h)) / (2 * h)
        d2 = (psi2(gamma, t + h) - psi2(gamma, t - h)) / (2 * h)
        assert d1 == pytest.approx(psi0(gamma, t), abs=1e-6)
        assert d2 == pytest.approx(psi1(gamma, t), abs=1e-6)


def test_series_branch_is_continuous():
    # psi2 and C22 switch to series below gamma * eta = 0.1
    for gamma in (1.0, 2.0):
        x = 0.1 / gamma
        lo, hi = x * (1 - 1e-12), x * (1 + 1e-12)
        assert psi2(gamma, lo) == pytest.approx(psi2(gamma, hi), rel=1e-9)
        assert covariance_matrix(gamma, lo)[1, 1] == pytest.approx(
            covariance_matrix(gamma, hi)[1, 1], rel=1e-8)


@given(st.floats(1e-3, 20.0), st.floats(1e-8, 2.0))
def test_coefficient_invariants(gamma, eta):
    k = kinetic_coefficients(gamma, eta)
    assert 0 < k.psi0 < 1
    assert 0 < k.psi1 < eta
    assert 0 < k.psi2 < eta**2 / 2
    assert k.delta == pytest.approx(math.exp(-eta * gamma / 2))
    assert k.psi0 == pytest.approx(k.delta**2, rel=1e-14)
    assert np.all(np.linalg.eigvalsh(k.cov) >= -1e-12 * np.trace(k.cov))
    assert np.allclose(k.cov_factor @ k.cov_factor.T, k.cov, rtol=1e-12, atol=1e-12 * np.abs(k.cov).max())
    assert k.cov_factor[0, 1] == 0.0


def test_coefficients_vanish_as_eta_goes_to_zero():
    k = kinetic_coefficients(1.3, 1e-12)
    assert k.psi0 == pytest.approx(1.0)
    assert k.psi1 < 1e-11 and k.psi2 < 1e-23
    assert np.abs(k.cov).max() < 1e-11


def test_coefficients_reject_bad_inputs():
    with pytest.raises(ValueError):
        kinetic_coefficients(0.0, 0.1)
    with pytest.raises(ValueError):
        kinetic_coefficients(1.0, -0.1)


# --- one-step oracles -------------------------------------------------------

def _state(theta, x, vt, vx):
    f = lambda a: np.array(a, dtype=float)
    return ParticleState(f(theta), f(x), f(vt), f(vx))


def test_kiplmc1_free_particle_zero_noise():
    k = kinetic_coefficients(1.5, 0.2)
    s = _state([1.0, -2.0], [[0.5]], [0.3, 0.7], [[-1.0]])
    out = kiplmc1_step(s, FreeParticleModel(2, 1), k, ZeroNoise())
    np.testing.assert_allclose(out.theta, s.theta + k.psi1 * s.v_theta, rtol=1e-15)
    np.testing.assert_allclose(out.v_theta, k.psi0 * s.v_theta, rtol=1e-15)
    np.testing.assert_allclose(out.latents, s.latents + k.psi1 * s.v_latents, rtol=1e-15)
    assert out.step_index == 1


def _scalar_psi(g, t):
    e = math.exp(-g * t)
    p1 = (1 - e) / g
    return e, p1, (t - p1) / g


def test_kiplmc1_scalar_oracle():
    g, eta = 2.0, 0.1
    model = GaussianHierarchicalModel([0.0])
    k = kinetic_coefficients(g, eta)
    rng = np.random.default_rng(4)
    xi_th, xi_x = rng.standard_normal((2, 1)), rng.standard_normal((2, 1, 1))
    out = kiplmc1_step(_state([1.0], [[0.0]], [0.0], [[0.0]]), model, k,
                       ReplayNoise([(xi_th, xi_x)]))
    # independent scalar recursion, N = 1, U = (x - th)^2/2 + x^2/2
    th, x, vt, vx = 1.0, 0.0, 0.0, 0.0
    p0, p1, p2 = _scalar_psi(g, eta)
    c11 = (1 - math.exp(-2 * g * eta)) / (2 * g)
    c12 = (1 - math.exp(-g * eta)) ** 2 / (2 * g * g)
    c22 = (eta - 2 * (1 - math.exp(-g * eta)) / g + (1 - math.exp(-2 * g * eta)) / (2 * g)) / g**2
    l11 = math.sqrt(c11)
    l21 = c12 / l11
    l22 = math.sqrt(c22 - l21 * l21)
    gth, gx = -(x - th), (x - th) + x
    e_t, ep_t = l11 * xi_th[0, 0], l21 * xi_th[0, 0] + l22 * xi_th[1, 0]
    e_x, ep_x = l11 * xi_x[0, 0, 0], l21 * xi_x[0, 0, 0] + l22 * xi_x[1, 0, 0]
    c = math.sqrt(2 * g)
    exp_th = th + p1 * vt - p2 * gth + c * ep_t
    exp_x = x + p1 * vx - p2 * gx + c * ep_x
    exp_vt = p0 * vt - p1 * gth + c * e_t
    exp_vx = p0 * vx - p1 * gx + c * e_x
    assert out.theta[0] == pytest.approx(exp_th, rel=1e-12)
    assert out.latents[0, 0] == pytest.approx(exp_x, rel=1e-12)
    assert out.v_theta[0] == pytest.approx(exp_vt, rel=1e-12)
    assert out.v_latents[0, 0] == pytest.approx(exp_vx, rel=1e-12)


def test_kiplmc2_scalar_oracle_zero_noise():
    g, eta = 2.0, 0.1
    model = GaussianHierarchicalModel([0.0])
    out = kiplmc2_step(_state([1.0], [[0.0]], [0.0], [[0.0]]), model,
                       kinetic_coefficients(g, eta), ZeroNoise())
    d = math.exp(-eta * g / 2)
    th, x, vt, vx = 1.0, 0.0, 0.0, 0.0
    grad = lambda th, x: (-(x - th), (x - th) + x)
    gt, gx = grad(th, x)
    vt, vx = d * vt - eta / 2 * gt, d * vx - eta / 2 * gx
    th, x = th + eta * vt, x + eta * vx
    gt, gx = grad(th, x)
    vt, vx = d * (vt - eta / 2 * gt), d * (vx - eta / 2 * gx)
    np.testing.assert_allclose([out.theta[0], out.latents[0, 0], out.v_theta[0], out.v_latents[0, 0]],
                               [th, x, vt, vx], rtol=1e-14, atol=1e-15)


def test_kiplmc2_identity_at_vanishing_step():
    s = _state([1.0], [[2.0], [3.0]], [0.5], [[-1.0], [0.2]])
    out = kiplmc2_step(s, GaussianHierarchicalModel([0.0]), kinetic_coefficients(1.0, 1e-300),
                       GaussianNoise(np.random.default_rng(0)))
    for a, b in [(out.theta, s.theta), (out.latents, s.latents),
                 (out.v_theta, s.v_theta), (out.v_latents, s.v_latents)]:
        np.testing.assert_array_equal(a, b)


def test_kiplmc2_matches_one_line_display():
    rng = np.random.default_rng(11)
    model = GaussianHierarchicalModel([0.3, -0.4], 0.8, 1.3)
    n, g, eta = 6, 1.7, 0.07
    k = kinetic_coefficients(g, eta)
    for _ in range(20):
        s = _state(rng.standard_normal(2), rng.standard_normal((n, 2)),
                   rng.standard_normal(2), rng.standard_normal((n, 2)))
        xi_th, xi_x = rng.standard_normal((2, 2)), rng.standard_normal((2, n, 2))
        out = kiplmc2_step(s, model, k, ReplayNoise([(xi_th, xi_x)]))
        d = math.exp(-eta * g / 2)
        r = math.sqrt(1 - d * d)
        g_th0, g_x0 = model.particle_grads(s.theta, s.latents)
        th = s.theta + eta * (d * s.v_theta + r / math.sqrt(n) * xi_th[0]) - eta**2 / (2 * n) * g_th0.sum(0)
        x = s.latents + eta * (d * s.v_latents + r * xi_x[0]) - eta**2 / 2 * g_x0
        g_th1, g_x1 = model.particle_grads(th, x)
        # the display writes (delta eps - eps') in the theta momentum; eps' is symmetric
        # and our sub-steps add it, so the display is evaluated at -eps'
        vt = (d * d * s.v_theta - d * eta / 2 * (g_th0.mean(0) + g_th1.mean(0))
              + r / math.sqrt(n) * (d * xi_th[0] - (-xi_th[1])))
        vx = d * d * s.v_latents - d * eta / 2 * (g_x0 + g_x1) + r * (d * xi_x[0] + xi_x[1])
        np.testing.assert_allclose(out.theta, th, rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(out.latents, x, rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(out.v_theta, vt, rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(out.v_latents, vx, rtol=1e-13, atol=1e-14)


def test_kiplmc2_caches_new_gradients():
    model = GaussianHierarchicalModel([0.0])
    s = initialize_state(1, 1, 3, x0_mode="Gaussian", seed=1)
    out = kiplmc2_step(s, model, kinetic_coefficients(1.0, 0.1), ZeroNoise())
    g_th, g_x = model.particle_grads(out.theta, out.latents)
    np.testing.assert_array_equal(out.grads[0], g_th)
    np.testing.assert_array_equal(out.grads[1], g_x)


def test_ipla_scalar_oracle_and_free_particle():
    eta = 0.05
    model = GaussianHierarchicalModel([0.5])
    xi_th, xi_x = np.array([[0.3], [9.0]]), np.array([[[-1.2], [0.4]], [[9.0], [9.0]]])
    s = _state([1.0], [[0.0], [2.0]], [0.0], [[0.0], [0.0]])
    out = ipla_step(s, model, eta, ReplayNoise([(xi_th, xi_x)]))
    th, xs = 1.0, [0.0, 2.0]
    gth = sum(-(x - th) for x in xs) / 2
    exp_th = th - eta * gth + math.sqrt(2 * eta / 2) * 0.3
    exp_x = [x - eta * ((x - th) + (x - 0.5)) + math.sqrt(2 * eta) * n for x, n in zip(xs, [-1.2, 0.4])]
    assert out.theta[0] == pytest.approx(exp_th, rel=1e-14)
    np.testing.assert_allclose(out.latents[:, 0], exp_x, rtol=1e-14)
    free = ipla_step(s, FreeParticleModel(1, 1), eta, ZeroNoise())
    np.testing.assert_array_equal(free.theta, s.theta)
    np.testing.assert_array_equal(free.latents, s.latents)


def test_pgd_is_ipla_with_theta_noise_removed():
    rng = np.random.default_rng(2)
    model = GaussianHierarchicalModel([0.1, 0.2])
    s = initialize_state(2, 2, 4, x0_mode="Gaussian", seed=3, overdamped=True)
    xi_th, xi_x = rng.standard_normal((2, 2)), rng.standard_normal((2, 4, 2))
    a = pgd_step(s, model, 0.02, ReplayNoise([(xi_th, xi_x)]))
    b = ipla_step(s, model, 0.02, ReplayNoise([(np.zeros_like(xi_th), xi_x)]))
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.latents, b.latents)
    free = pgd_step(s, FreeParticleModel(2, 2), 0.02, ReplayNoise([(xi_th, xi_x)]))
    np.testing.assert_array_equal(free.theta, s.theta)


def test_mpgdnc_is_kiplmc1_with_theta_noise_removed():
    rng = np.random.default_rng(5)
    model = GaussianHierarchicalModel([0.1, 0.2])
    k = kinetic_coefficients(1.2, 0.05)
    s = initialize_state(2, 2, 4, x0_mode="Gaussian", seed=3)
    xi_th, xi_x = rng.standard_normal((2, 2)), rng.standard_normal((2, 4, 2))
    a = mpgdnc_step(s, model, k, ReplayNoise([(xi_th, xi_x)]))
    b = kiplmc1_step(s, model, k, ReplayNoise([(np.zeros_like(xi_th), xi_x)]))
    for f in ("theta", "latents", "v_theta", "v_latents"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


# --- linear stability --------------------------------------------------------

def _jacobian(algorithm, model, gamma, eta, n=3):
    d = model.spec.d_theta
    step = make_stepper(algorithm, model, gamma, eta)
    dim = 2 * (d + n * d)

    def pack(s):
        return np.concatenate([s.theta, s.latents.ravel(), s.v_theta, s.v_latents.ravel()])

    def unpack(z):
        a, b = d, d + n * d
        return ParticleState(z[:a], z[a:b].reshape(n, d), z[b:b + d], z[b + d:].reshape(n, d))

    base = pack(step(unpack(np.zeros(dim)), ZeroNoise()))
    cols = [pack(step(unpack(e), ZeroNoise())) - base for e in np.eye(dim)]
    return np.array(cols).T


@pytest.mark.parametrize("algorithm", ["KIPLMC1", "KIPLMC2"])
def test_zero_noise_map_contracts_in_theory_regime(algorithm):
    model = GaussianHierarchicalModel([0.0], 1.0, 1.0)
    mu, lip = model.spec.mu_hint, model.spec.lip_hint
    gamma = math.sqrt(mu + lip)
    eta = mu / (4 * gamma * lip)
    jac = _jacobian(algorithm, model, gamma, eta)
    assert np.max(np.abs(np.linalg.eigvals(jac))) < 1


def test_kiplmc1_unstable_beyond_linear_threshold():
    # for curvature w^2 the exponential integrator loses stability once w^2 > 2 gamma / eta
    model = GaussianHierarchicalModel([0.0], 1.0, 1.0)
    jac = _jacobian("KIPLMC1", model, 1.0, 1.0)
    assert np.max(np.abs(np.linalg.eigvals(jac))) > 1
    jac2 = _jacobian("KIPLMC2", model, 1.0, 1.0)
    assert np.max(np.abs(np.linalg.eigvals(jac2))) < 1


# --- determinism, exchangeability, batching ----------------------------------

@pytest.mark.parametrize("algorithm", ["KIPLMC1", "KIPLMC2", "IPLA", "PGD", "MPGDNC"])
def test_runs_are_bitwise_reproducible(algorithm, small_logistic):
    def run():
        s = initialize_state(3, 3, 5, seed=9, overdamped=algorithm in ("IPLA", "PGD"))
        noise = GaussianNoise(np.random.default_rng(42))
        step = make_stepper(algorithm, small_logistic, 1.1, 0.02)
        out = []
        for _ in range(50):
            s = step(s, noise)
            out.append(s.theta)
        return np.array(out)

    assert np.array_equal(run(), run())


@pytest.mark.parametrize("algorithm", ["KIPLMC1", "KIPLMC2", "IPLA"])
def test_latent_exchangeability(algorithm, small_logistic):
    n, steps = 6, 40
    perm = np.random.default_rng(0).permutation(n)
    s = initialize_state(3, 3, n, x0_mode="Gaussian", seed=1)
    rec = RecordingNoise(GaussianNoise(np.random.default_rng(7)))
    step = make_stepper(algorithm, small_logistic, 1.0, 0.03)
    a = s
    for _ in range(steps):
        a = step(a, rec)
    permuted = [(th, lat[:, perm]) for th, lat in rec.draws]
    b = ParticleState(s.theta, s.latents[perm], s.v_theta, s.v_latents[perm])
    replay = ReplayNoise(permuted)
    for _ in range(steps):
        b = step(b, replay)
    # the particle sum is reordered, so agreement is to rounding only
    np.testing.assert_allclose(b.latents, a.latents[perm], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.theta, a.theta, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("algorithm", ["KIPLMC1", "KIPLMC2", "IPLA", "PGD", "MPGDNC"])
def test_batched_replicates_match_single_runs(algorithm, small_logistic):
    reps, n = 3, 4
    overdamped = algorithm in ("IPLA", "PGD")
    singles = [initialize_state(3, 3, n, seed=np.random.default_rng(r), overdamped=overdamped)
               for r in range(reps)]
    batch = ParticleState(*(np.stack([getattr(s, f) for s in singles])
                            for f in ("theta", "latents", "v_theta", "v_latents")))
    step = make_stepper(algorithm, small_logistic, 1.0, 0.05)
    noise = StackedGaussianNoise([np.random.default_rng(100 + r) for r in range(reps)])
    per = [GaussianNoise(np.random.default_rng(100 + r)) for r in range(reps)]
    for _ in range(25):
        batch = step(batch, noise)
        singles = [step(s, nz) for s, nz in zip(singles, per)]
    for r in range(reps):
        np.testing.assert_array_equal(batch.theta[r], singles[r].theta)
        np.testing.assert_array_equal(batch.latents[r], singles[r].latents)


# --- statistical checks ------------------------------------------------------

def test_kiplmc1_free_particle_one_step_moments():
    g, eta, draws = 1.3, 0.4, 100_000
    k = kinetic_coefficients(g, eta)
    s = ParticleState(np.full((draws, 1), 0.5), np.full((draws, 1, 1), -1.0),
                      np.full((draws, 1), 2.0), np.full((draws, 1, 1), 1.0))
    out = kiplmc1_step(s, FreeParticleModel(1, 1), k, GaussianNoise(np.random.default_rng(0)))
    pos, vel = out.latents[:, 0, 0], out.v_latents[:, 0, 0]
    se = math.sqrt(2 * g * k.cov.max() / draws)
    assert pos.mean() == pytest.approx(-1.0 + k.psi1 * 1.0, abs=5 * se)
    assert vel.mean() == pytest.approx(k.psi0 * 1.0, abs=5 * se)
    emp = np.cov(np.stack([vel, pos]))
    np.testing.assert_allclose(emp, 2 * g * k.cov, rtol=0.03)


def _stationary_theta_variance(algorithm, n_particles, eta, gamma, burn, keep, reps=16):
    model = GaussianHierarchicalModel([0.7])
    rngs = [np.random.default_rng(1000 + r) for r in range(reps)]
    parts = [initialize_state(1, 1, n_particles, theta0=[0.7], x0=[0.7], seed=g,
                              overdamped=algorithm in ("IPLA", "PGD")) for g in rngs]
    s = ParticleState(*(np.stack([getattr(p, f) for p in parts])
                        for f in ("theta", "latents", "v_theta", "v_latents")))
    step = make_stepper(algorithm, model, gamma, eta)
    noise = StackedGaussianNoise(rngs)
    out = np.empty((keep, reps))
    for k in range(burn + keep):
        s = step(s, noise)
        if k >= burn:
            out[k - burn] = s.theta[:, 0]
    return out


@pytest.mark.parametrize("algorithm", ["KIPLMC1", "KIPLMC2", "IPLA"])
def test_stationary_theta_variance_gaussian(algorithm):
    n = 4
    out = _stationary_theta_variance(algorithm, n, 0.05, 2.0, 1000, 8000)
    target = 2.0 / n
    assert np.mean(out.var(axis=0, ddof=1)) == pytest.approx(target, rel=0.2)


def test_pgd_variance_smaller_than_ipla():
    a = _stationary_theta_variance("PGD", 4, 0.05, 1.0, 1000, 4000, reps=4)
    b = _stationary_theta_variance("IPLA", 4, 0.05, 1.0, 1000, 4000, reps=4)
    assert a.var(axis=0).mean() < b.var(axis=0).mean()
    assert abs(a.mean() - 0.7) < 0.2


# --- initialisation and reference ---------------------------------------------

def test_initialize_state_point_mass_and_determinism():
    s = initialize_state(2, 3, 5, seed=4)
    assert not s.theta.any() and not s.latents.any()
    assert s.v_latents.shape == (5, 3) and np.all(s.v_theta != 0)
    t = initialize_state(2, 3, 5, seed=4)
    assert np.array_equal(s.v_latents, t.v_latents)
    o = initialize_state(2, 3, 5, seed=4, overdamped=True)
    assert not o.v_theta.any() and not o.v_latents.any()


def test_initialize_state_gaussian_mean():
    s = initialize_state(1, 1, 1, x0_mode="Gaussian", seed=0, batch_shape=(100_000,))
    assert abs(s.theta.mean()) < 3 / math.sqrt(100_000)
    with pytest.raises(ValueError):
        initialize_state(1, 1, 1, x0_mode="Uniform")


def test_reference_free_particle_velocity_decay():
    g, h, t = 2.0, 1e-4, 0.5
    s = _state([0.0], [[0.0]], [1.0], [[1.0]])

    out = s
    for _ in range(5000):
        out = kipld_em_step(out, FreeParticleModel(1, 1), g, h, np.zeros(1), np.zeros((1, 1)))
    assert out.v_theta[0] == pytest.approx((1 - g * h) ** 5000, rel=1e-12)
    assert out.v_theta[0] == pytest.approx(math.exp(-g * t), rel=10 * g * h)


def test_coupled_discretisation_error_shrinks():
    model = GaussianHierarchicalModel([0.0])
    reps = 400
    init = initialize_state(1, 1, 2, seed=0, batch_shape=(reps,))
    ref, coarse = simulate_coupled(init, model, 1.0, 0.5, [("KIPLMC1", 0.1), ("KIPLMC1", 0.05),
                                                          ("KIPLMC2", 0.1), ("KIPLMC2", 0.05)],
                                   fine_eta=1e-3, seed=1)
    for alg in ("KIPLMC1", "KIPLMC2"):
        e1 = np.sqrt(np.mean((coarse[(alg, 0.1)].theta - ref.theta) ** 2))
        e2 = np.sqrt(np.mean((coarse[(alg, 0.05)].theta - ref.theta) ** 2))
        assert e2 < e1


def test_coupled_rejects_incommensurate_step():
    model = GaussianHierarchicalModel([0.0])
    init = initialize_state(1, 1, 1, seed=0)
    with pytest.raises(ValueError):
        simulate_coupled(init, model, 1.0, 0.1, [("KIPLMC1", 0.003)], fine_eta=1e-3)
    with pytest.raises(ValueError):
        simulate_coupled(init, model, 1.0, 0.1, [("IPLA", 0.01)], fine_eta=1e-3)


def test_reference_simulator_is_seeded():
    model = GaussianHierarchicalModel([0.0])
    s = initialize_state(1, 1, 2, seed=0)
    a = reference_kipld_simulate(s, model, 1.0, 0.01, 1e-3, seed=3)
    b = reference_kipld_simulate(s, model, 1.0, 0.01, 1e-3, seed=3)
    assert np.array_equal(a.theta, b.theta) and a.step_index == 10


def test_make_stepper_rejects_unknown():
    with pytest.raises(ValueError):
        make_stepper("HMC", FreeParticleModel(), 1.0, 0.1)


def test_divergence_is_flagged_not_clamped():
    model = GaussianHierarchicalModel([0.0])
    s = initialize_state(1, 1, 2, seed=0)
    step = make_stepper("MPGDNC", model, 1.0, 1.5)
    with np.errstate(all="ignore"):
        for _ in range(20_000):
            s = step(s, ZeroNoise())
    assert s.diverged
