import json

import numpy as np
import pytest

import oracles
from qot.algebra import AlgebraError, Density
from qot.chains import (ChainDescriptor, car_tower, coarse_graining, corner_tower, distance_convergence,
                        entropy_profile, heat_restriction_residual, include_path, include_state, restrict_element,
                        restrict_path, restrict_state, restriction_mass)
from qot.examples import random_full_rank, random_in_component
from qot.quasientropy import logarithmic
from qot.transport import TransportOptions, distance, energy, geometry_for


@pytest.fixture(scope="module")
def car3():
    return car_tower(3)


def test_locality_residuals_vanish(car3):
    assert len(car3.locality) == 2
    for r in car3.locality:
        assert max(v for k, v in r.items() if k != "link") < 1e-12


def test_restriction_is_scaled_partial_trace(car3, rng):
    rho = random_full_rank(car3.stages[1].algebra, rng)
    X = rho.element.blocks[0]
    got = restrict_element(car3, 1, 0, rho.element).blocks[0]
    # tau_2 = tr / 4, tau_1 = tr / 2: the trace adjoint of x -> x (x) I is Tr_2 / 2
    assert np.allclose(got, oracles.partial_trace_last(X, 2, 2) / 2, atol=1e-13)
    assert restriction_mass(car3, 1, 0, rho) == pytest.approx(1.0)


def test_include_then_restrict_is_identity(car3, rng):
    rho = random_full_rank(car3.stages[0].algebra, rng)
    up = include_state(car3, 0, 2, rho)
    assert restrict_state(car3, 2, 0, up).element.allclose(rho.element, 1e-12)
    NA, _ = car3.inclusion(0, 2)
    PA, _ = car3.restriction(2, 0)
    assert np.allclose(PA @ NA, np.eye(NA.shape[1]))


def test_path_energy_under_inclusion_and_restriction(car3, rng):
    g = car3.gradient(0)
    r0 = random_full_rank(car3.stages[0].algebra, rng)
    r1 = random_in_component(geometry_for(g, r0), rng)
    path = distance(g, None, 1.0, r0, r1, 8).path
    up = include_path(car3, 0, 2, path)
    up.check_invariants()
    f = logarithmic()
    assert energy(up, f) == pytest.approx(energy(path, f), rel=1e-10)
    # restricting a top-level path never increases its energy
    g2 = car3.gradient(2)
    s0 = random_full_rank(car3.stages[2].algebra, rng)
    s1 = random_in_component(geometry_for(g2, s0), rng)
    top = distance(g2, None, 1.0, s0, s1, 8).path
    down = restrict_path(car3, 2, 0, top)
    down.check_invariants()
    assert energy(down, f) <= energy(top, f) + 1e-10


def test_heat_commutes_with_restriction(car3, rng):
    rho = random_full_rank(car3.stages[2].algebra, rng)
    for j in (0, 1):
        for t in (0.2, 2.0):
            assert heat_restriction_residual(car3, 2, j, t) < 1e-12
            assert heat_restriction_residual(car3, 2, j, t, rho) < 1e-12


def test_distance_convergence_and_entropy_profile(car3, rng):
    g = car3.gradient(2)
    r0 = random_full_rank(car3.stages[2].algebra, rng)
    r1 = random_in_component(geometry_for(g, r0), rng)
    tab = distance_convergence(car3, r0, r1, K=8, opts=TransportOptions(refine=2))
    assert tab.nondecreasing and [r["stage"] for r in tab.rows] == [0, 1, 2]
    assert all(r["status"] == "converged" for r in tab.rows)
    prof = entropy_profile(car3, r0)
    assert prof["monotone"]
    json.dumps(tab.to_json())


def test_corner_tower_masses_and_degenerate_rows(rng):
    ch = corner_tower(2, 2)
    assert not ch.links[0].unital
    A = ch.stages[1].algebra
    rho = random_full_rank(A, rng)
    m = restriction_mass(ch, 1, 0, rho)
    assert m == pytest.approx(rho.element.blocks[0][:2, :2].trace().real)
    assert restrict_state(ch, 1, 0, rho).element.allclose(
        ch.stages[0].algebra.element([rho.element.blocks[0][:2, :2] / m]), 1e-12)
    corner = Density(A.element([np.diag([0.0, 0.0, 1.0])]))
    with pytest.raises(AlgebraError):
        restrict_state(ch, 1, 0, corner)
    tab = distance_convergence(ch, corner, corner, K=4)
    assert tab.rows[0]["status"] == "degenerate" and "mass" in tab.rows[0]["note"]


def test_chain_json_roundtrip(car3):
    data = json.loads(json.dumps(car3.to_json()))
    again = ChainDescriptor.from_json(data)
    assert again.J == 3
    assert np.allclose(again.inclusion(0, 2)[0], car3.inclusion(0, 2)[0])
    with pytest.raises(AlgebraError):
        ChainDescriptor.from_json({"stages": data["stages"], "links": data["links"][:1]})


def test_coarse_graining_is_monotone(rng):
    ch = car_tower(2)
    A, B = ch.stages[1].algebra, ch.gradient(1).target
    for _ in range(10):
        mu = random_full_rank(A, rng).element
        eta = random_full_rank(A, rng).element
        r = coarse_graining(ch, 1, 0, mu, eta, B.random_element(rng))
        assert r["restricted"] <= r["full"] * (1 + 1e-10)


def test_pair_index_checks(car3):
    with pytest.raises(AlgebraError):
        car3.inclusion(2, 1)
    with pytest.raises(AlgebraError):
        car3.inclusion(0, 3)
