import numpy as np
import pytest

from qot.algebra import AlgebraError, Density
from qot.entropy_geometry import (bakry_emery_check, certify, entropy, entropy_dissipation, entropy_flow_bound,
                                  euler_lagrange_residual, evi_check, fisher_information, hessian_entropy,
                                  hessian_lower_bound, hessian_matrix, l2_distance_bound, min_rayleigh)
from qot.examples import (car_stage, markov, perturbed, principal_automorphism, qubit, random_full_rank,
                          random_in_component)
from qot.gradient import fixed_part, heat_state
from qot.quasientropy import arithmetic
from qot.riemann import FixedStateGeometry
from qot.transport import TransportOptions, distance, geometry_for


def _geo(ex, seed=0):
    rng = np.random.default_rng(seed)
    xi = fixed_part(ex.gradient.heat, random_full_rank(ex.algebra, rng))
    geo = FixedStateGeometry(ex.gradient, xi)
    return geo, random_in_component(geo, rng, 0.1, 0.5), rng


def test_entropy_values():
    A = car_stage(2).algebra
    assert entropy(Density.uniform(A)) == pytest.approx(0.0, abs=1e-14)
    rho = Density(A.element([np.diag([2.0, 1.0, 0.5, 0.5])]))
    assert entropy(rho) == pytest.approx(0.25 * (2 * np.log(2) + 2 * 0.5 * np.log(0.5)))
    with pytest.raises(AlgebraError):
        entropy(A.element([np.diag([1.0, -1.0, 0, 0])]))


@pytest.mark.parametrize("ex", [qubit(), car_stage(2), markov([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])],
                         ids=["qubit", "car2", "markov3"])
def test_entropy_dissipation_three_routes(ex):
    rho = random_full_rank(ex.algebra, np.random.default_rng(1))
    for t in (0.1, 1.0):
        d = entropy_dissipation(ex.gradient, rho, t)
        assert d["identity"] == pytest.approx(d["finite_difference"], rel=1e-6, abs=1e-10)
        assert d["identity"] == pytest.approx(d["metric"], rel=1e-8, abs=1e-12)
        assert d["identity"] <= 1e-12


def test_hessian_matrix_matches_quadratic_form():
    geo, mu, rng = _geo(car_stage(2), 2)
    H, G = hessian_matrix(geo, mu)
    for _ in range(3):
        x = rng.standard_normal(geo.dim)
        assert x @ H @ x == pytest.approx(hessian_entropy(geo, mu, x), rel=1e-8, abs=1e-12)
    val, vec = min_rayleigh(geo, mu)
    assert val == pytest.approx(hessian_entropy(geo, mu, vec) / (vec @ G @ vec), rel=1e-8)


def test_hessian_bound_principal_automorphism():
    hb = hessian_lower_bound(principal_automorphism(1).gradient, samples=8)
    assert hb.lam == pytest.approx(4.0, abs=0.05)
    assert hb.argmin and len(hb.samples) > 8


def test_hessian_requires_log_mean():
    ex = qubit()
    xi = fixed_part(ex.gradient.heat, random_full_rank(ex.algebra, np.random.default_rng(0)))
    geo = FixedStateGeometry(ex.gradient, xi, arithmetic())
    with pytest.raises(AlgebraError):
        hessian_entropy(geo, xi, np.ones(geo.dim))


def test_el_residual_shrinks_with_refinement():
    ex = qubit()
    geo, mu, rng = _geo(ex, 3)
    nu = random_in_component(geo, rng, 0.2, 0.5)
    res = []
    for K in (16, 32):
        path = distance(ex.gradient, None, 1.0, mu, nu, K).path
        el = euler_lagrange_residual(geo, path)
        sel = [i for i, j in enumerate(el.nodes) if (j * 16) % K == 0]
        res.append(el.norms[sel].max())
    assert res[1] < 0.5 * res[0]
    short = distance(ex.gradient, None, 1.0, mu, nu, 3).path
    with pytest.raises(AlgebraError):
        euler_lagrange_residual(geo, short)


def test_distance_bounds_hold():
    ex = car_stage(2)
    g = ex.gradient
    rng = np.random.default_rng(4)
    rho = random_full_rank(ex.algebra, rng)
    r = entropy_flow_bound(g, rho, 0.5, 8, TransportOptions(refine=2))
    # the heat flow curve is an admissible path
    assert r["distance"] <= r["path"] + r["gap"] + 1e-9
    assert r["distance"] <= r["sqrt"] + r["gap"] + 1e-9
    assert r["delta_entropy"] >= 0
    mu = random_in_component(geometry_for(g, rho), rng)
    W = distance(g, None, 1.0, rho, mu, 8, TransportOptions(refine=2))
    assert W.distance <= l2_distance_bound(g, rho, mu)["bound"]


def test_fisher_information_is_nonnegative(shipped, rng):
    for ex in shipped.values():
        rho = random_full_rank(ex.algebra, rng)
        assert fisher_information(ex.gradient, rho) >= -1e-12


def test_bakry_emery_rows_and_frontier():
    g = qubit().gradient
    ok = bakry_emery_check(g, 0.0, 4)
    assert ok.passed and ok.details
    assert not bakry_emery_check(g, 1.5, 4).passed
    bad = bakry_emery_check(perturbed(principal_automorphism(1), 0.2).gradient, 0.0, 4)
    assert not bad.passed
    assert any(r.get("status") == "positivity_lost" for r in bad.details)


def test_evi_reports_infeasible_pairs():
    ex = qubit()
    A = ex.algebra
    mu = Density(A.element([np.diag([0.6, 0.4])]))
    eta = Density(A.element([np.diag([0.2, 0.8])]))
    rep = evi_check(ex.gradient, 0.0, [(mu, eta)], (0.1,), K=4, opts=TransportOptions())
    assert rep.passed and rep.details == [{"pair": 0, "status": "infeasible"}]


def test_certify_report_shape():
    rep = certify(markov([[0.5, 0.5], [0.5, 0.5]]).gradient, 2.0, n_samples=4, n_pairs=2, K=8, t_grid=(0.1,))
    assert set(rep["checks"]) == {"be", "evi", "convexity", "hessian"}
    assert rep["verdict"] == "pass" and rep["consistent"]
    rep = certify(markov([[0.5, 0.5], [0.5, 0.5]]).gradient, 3.0, n_samples=4, n_pairs=2, K=8, t_grid=(0.1,))
    assert rep["verdict"] != "pass"


def test_heat_state_entropy_decreases(shipped, rng):
    for ex in shipped.values():
        rho = random_full_rank(ex.algebra, rng)
        es = [entropy(heat_state(ex.gradient.heat, t, rho)) for t in (0, 0.1, 1, 10)]
        assert all(a >= b - 1e-12 for a, b in zip(es, es[1:]))
