import numpy as np
import pytest
from scipy.integrate import quad

from qot.algebra import AlgebraError
from qot.examples import car_stage, markov, qubit, random_full_rank, random_in_component
from qot.gradient import fixed_part
from qot.quasientropy import arithmetic, quasi_entropy
from qot.riemann import FixedStateGeometry


def _setup(ex, seed=0, f=None, theta=1.0):
    rng = np.random.default_rng(seed)
    xi = fixed_part(ex.gradient.heat, random_full_rank(ex.algebra, rng))
    geo = FixedStateGeometry(ex.gradient, xi, f, theta)
    mu = random_in_component(geo, rng, 0.1, 0.5)
    return geo, mu, rng


@pytest.mark.parametrize("ex", [qubit(), car_stage(2), markov([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])],
                         ids=["qubit", "car2", "markov3"])
def test_metric_matches_quasi_entropy(ex):
    geo, mu, rng = _setup(ex)
    sp = geo.spectrum(mu.vec)
    S = geo.S_matrix(sp)
    assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() > 0
    # S p . p = I(mu, mu, M grad p) for the potential direction p
    p = rng.standard_normal(geo.dim)
    w = geo.B.from_vec(geo.M_apply(sp, geo.NT @ p))
    assert p @ S @ p == pytest.approx(quasi_entropy(ex.bimodule, mu, mu, w, geo.f).value, rel=1e-10)


def test_batched_spectrum_matches_single():
    geo, mu, rng = _setup(car_stage(2), 1)
    c = geo.state_coords(mu)
    C = np.stack([c, 0.5 * c, 0.2 * c])
    Sb = geo.S_matrix(geo.spectrum(geo.state_vec(C)))
    for k in range(3):
        assert np.allclose(Sb[k], geo.S_matrix(geo.spectrum(geo.state_vec(C[k]))), atol=1e-12)


@pytest.mark.parametrize("f,theta", [(None, 1.0), (arithmetic(), 1.0), (None, 0.6)])
def test_q_gradient_against_finite_differences(f, theta):
    geo, mu, rng = _setup(car_stage(2), 2, f, theta)
    c = geo.state_coords(mu)
    v = geo.NT @ rng.standard_normal(geo.dim) + 0.3 * geo.B.random_element(rng).vec

    def q(cc):
        sp = geo.spectrum(geo.state_vec(cc))
        return float(np.vdot(v, geo.B.weight_vector * geo.M_apply(sp, v)).real)

    g = geo.q_gradient(geo.spectrum(mu.vec), v)
    h = 1e-6
    fd = np.array([(q(c + h * e) - q(c - h * e)) / (2 * h) for e in np.eye(geo.dim)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_resolvent_kernels_against_quad():
    geo, mu, _ = _setup(qubit(), 3)
    sp = geo.spectrum(mu.vec)
    a, b = sp.lam[0][0], sp.kap[0][0]
    oracle = lambda x, y, z: quad(lambda s: 1 / ((x + s) * (y + s) * (z + s)), 0, np.inf, epsrel=1e-12)[0]
    for sub in ("log", "rational"):
        sp._kernels = None
        kphi, kpsi = geo.kernels(sp, substitution=sub)[0]
        assert kphi[0, 0, 1, 0] == pytest.approx(oracle(a[0], a[1], b[0]), rel=1e-8)
        assert kpsi[0, 1, 0, 1] == pytest.approx(oracle(a[1], b[0], b[1]), rel=1e-8)
    with pytest.raises(AlgebraError):
        sp._kernels = None
        geo.kernels(sp, substitution="simpson")


def test_lambda_requires_log_mean():
    geo, mu, rng = _setup(qubit(), 4, arithmetic())
    sp = geo.spectrum(mu.vec)
    with pytest.raises(AlgebraError):
        geo.lambda_apply(sp, mu.vec, geo.B.random_element(rng).vec)


def test_geodesic_shooting_conserves_energy():
    geo, mu, rng = _setup(car_stage(2), 5)
    c0 = geo.state_coords(mu)
    v0 = 0.05 * rng.standard_normal(geo.dim)
    times = np.array([-0.5, 0.25, 0.5, 1.0])
    traj = geo.shoot(c0, v0, times)

    def speed2(c, v):
        S = geo.S_matrix(geo.spectrum(geo.state_vec(c)))
        p = np.linalg.solve(S, v)
        return p @ S @ p

    e0 = speed2(c0, v0)
    h = 1e-4
    for t, c in zip(times, traj):
        fwd, bwd = geo.shoot(c0, v0, np.array([t + h, t - h]))
        assert speed2(c, (fwd - bwd) / (2 * h)) == pytest.approx(e0, rel=1e-6)


def test_spectrum_rejects_boundary_states():
    geo, mu, rng = _setup(qubit(), 6)
    d = rng.standard_normal(geo.dim)
    from qot.examples import boundary_distance
    s = boundary_distance(geo, d)
    with pytest.raises(AlgebraError):
        geo.spectrum(geo.state_vec(1.01 * s * d))
