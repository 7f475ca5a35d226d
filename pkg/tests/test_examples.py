from functools import reduce

import numpy as np
import pytest

from qot.algebra import AlgebraError, trace
from qot.examples import (ExampleSpec, annihilators, boundary_distance, build, car_stage, check_car, markov,
                          perturbed, principal_automorphism, qubit, random_full_rank, random_in_component)
from qot.gradient import commutation_lambda, fixed_part
from qot.transport import geometry_for


@pytest.mark.parametrize("j", [1, 2, 3])
def test_car_relations_and_trace(j):
    a = annihilators(j)
    check_car(a)
    A = car_stage(j).algebra
    for ak in a:
        x = A.element([ak])
        assert trace(x.adjoint() @ x).real == pytest.approx(0.5)
    assert A.total_trace() == pytest.approx(1.0)


def test_check_car_detects_violation():
    a = annihilators(2)
    with pytest.raises(AlgebraError):
        check_car([a[0], a[0]])


def test_car_mode_eigenvectors_and_parity():
    nu = [0.7, 1.9]
    ex = car_stage(2, nu)
    g = ex.gradient
    A = ex.algebra
    for v, ak in zip(nu, annihilators(2)):
        x = A.element([ak])
        assert g.apply(x).allclose(x * (1j * v), 1e-12)
    parity = A.element([reduce(np.kron, [np.diag([1.0, -1.0])] * 2)])
    assert g.apply(parity).norm() < 1e-12


@pytest.mark.parametrize("N", [1, 2])
def test_principal_automorphism_commutation(N):
    g = principal_automorphism(N).gradient
    for n in range(N):
        fit = commutation_lambda(g, n)
        assert fit.certified and fit.lam == pytest.approx(4.0, abs=1e-10)
    g.check_invariants(tol=1e-10)


def test_principal_automorphism_argument_checks():
    with pytest.raises(AlgebraError):
        principal_automorphism(2, fermion_modes=1)
    with pytest.raises(AlgebraError):
        principal_automorphism(1, aux_dim=0)


def test_perturbed_keeps_kernel_but_breaks_leibniz():
    base = car_stage(2)
    ex = perturbed(base, eps=0.2, seed=3)
    g, g0 = ex.gradient, base.gradient
    assert np.allclose(g.heat.kernel_projection, g0.heat.kernel_projection, atol=1e-10)
    H = g.heat
    s = np.sqrt(g.source.weight_vector)
    sym = s[:, None] * g.laplacian / s[None, :]
    assert np.allclose(sym, sym.conj().T, atol=1e-12)
    assert g.invariant_residuals()["leibniz"] > 1e-3
    rng = np.random.default_rng(0)
    rho = random_full_rank(ex.algebra, rng)
    assert fixed_part(H, rho).element.allclose(fixed_part(g0.heat, rho).element, 1e-10)


def test_build_roundtrip():
    for ex in (qubit(), car_stage(2), markov([[0.5, 0.5], [0.2, 0.8]]), principal_automorphism(1),
               perturbed(qubit(), 0.1, 2)):
        again = build(ex.spec.to_json())
        assert np.allclose(again.gradient.nabla, ex.gradient.nabla)
        assert ExampleSpec.from_json(ex.spec.to_json()) == ex.spec
    with pytest.raises(AlgebraError):
        build({"kind": "nope", "params": {}})
    with pytest.raises(AlgebraError):
        build({"kind": "car_stage", "params": {}})


def test_component_sampler_stays_in_slice(rng):
    ex = car_stage(2)
    rho = random_full_rank(ex.algebra, rng)
    geo = geometry_for(ex.gradient, rho)
    for _ in range(5):
        s = random_in_component(geo, rng)
        assert geo.in_slice(s) and s.min_eig() > 0
    d = rng.standard_normal(geo.dim)
    smax = boundary_distance(geo, d)
    assert geo.min_support_eig(geo.state_vec(0.999 * smax * d)) > 0
    assert geo.min_support_eig(geo.state_vec(1.001 * smax * d)) <= 0
