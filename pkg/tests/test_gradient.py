import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from qot.algebra import AlgebraDescriptor, AlgebraError, Density, trace
from qot.bimodule import canonical_bimodule
from qot.examples import qubit, random_full_rank, shipped_examples
from qot.gradient import (commutation_lambda, direct_sum, fixed_part, from_commutator, from_markov, heat_apply,
                          heat_state, image_part, spectral_gap)


@pytest.mark.parametrize("name", ["markov2", "markov3", "qubit", "car2", "pa1"])
def test_shipped_gradients_satisfy_invariants(shipped, name):
    g = shipped[name].gradient
    res = g.check_invariants(tol=1e-10)
    assert res["unit"] < 1e-12


def test_markov_gradient_hand_oracle():
    K = np.array([[0.3, 0.7], [0.4, 0.6]])
    g = from_markov(K)
    pi = oracles.stationary(K)
    assert np.allclose(g.provenance["pi"], pi)
    F = g.source.element([[[2.0]], [[-1.0]]])
    dF = g.apply(F).vec
    # edges (0, 1) and (1, 0)
    assert np.allclose(dF, [3.0, -3.0])
    # reversible: Delta F(x) = 2 sum_y K(x, y) (F(x) - F(y))
    assert np.allclose(g.apply_laplacian(F).vec, [2 * 0.7 * 3.0, 2 * 0.4 * -3.0])


def test_markov_rejects_bad_kernels():
    with pytest.raises(AlgebraError):
        from_markov([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(AlgebraError):
        from_markov([[1.0, 0.0], [0.0, 1.0]])


def test_nonreversible_markov_skips_symmetry():
    K = np.array([[0.0, 0.9, 0.1], [0.1, 0.0, 0.9], [0.9, 0.1, 0.0]])
    g = from_markov(K)
    assert not g.provenance["reversible"]
    g.check_invariants(check_symmetry=False)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2 ** 31))
def test_commutator_laplacian_matches_oracle(n, seed):
    rng = np.random.default_rng(seed)
    A = AlgebraDescriptor((n,), (1.0,))
    D = A.random_element(rng, hermitian=True)
    g = from_commutator(canonical_bimodule(A), D)
    C = oracles.commutator_matrix(D.blocks[0])
    assert np.allclose(g.nabla, C, atol=1e-12)
    assert np.allclose(g.laplacian, C.conj().T @ C, atol=1e-10)
    t = rng.uniform(0.05, 2)
    assert np.allclose(g.heat.heat_matrix(t), oracles.heat_matrix_oracle(C.conj().T @ C, t), atol=1e-9)


def test_heat_flow_preserves_states_and_fixed_part(shipped, rng):
    for ex in shipped.values():
        g = ex.gradient
        rho = random_full_rank(ex.algebra, rng)
        for t in (0.0, 0.3, 3.0):
            h = heat_state(g.heat, t, rho)
            assert abs(trace(h.element) - 1) < 1e-12
            assert h.min_eig() > 0
            assert fixed_part(g.heat, h).element.allclose(fixed_part(g.heat, rho).element, 1e-10)
        # long times converge to the fixed part
        far = heat_apply(g.heat, 200.0, rho.element)
        assert far.allclose(fixed_part(g.heat, rho).element, 1e-8)
        assert image_part(g.heat, far).norm() < 1e-8


def test_kernel_of_qubit_is_diagonal():
    g = qubit().gradient
    assert g.heat.kernel_dim == 2 and not g.heat.ergodic
    gap = spectral_gap(g.heat)
    assert gap.defined and gap.smallest_nonzero == pytest.approx(1.0)


def test_commutation_lambda_values():
    ex = shipped_examples()
    pa = ex["pa1"].gradient
    fit = commutation_lambda(pa)
    assert fit.certified and fit.lam == pytest.approx(4.0, abs=1e-10)
    q = commutation_lambda(ex["qubit"].gradient)
    assert q.certified and abs(q.lam) < 1e-10
    # the Markov target is not a copy of A
    with pytest.raises(AlgebraError):
        commutation_lambda(ex["markov3"].gradient)


def test_direct_sum_stacks_components(rng):
    A = AlgebraDescriptor((2,), (1.0,))
    bm = canonical_bimodule(A)
    g1 = from_commutator(bm, A.random_element(rng, hermitian=True))
    g2 = from_commutator(bm, A.random_element(rng, hermitian=True))
    g = direct_sum([g1, g2])
    assert np.allclose(g.laplacian, g1.laplacian + g2.laplacian)
    assert np.allclose(g.component(1), g2.nabla)
    g.check_invariants()


def test_heat_rejects_negative_time():
    g = qubit().gradient
    with pytest.raises(AlgebraError):
        heat_state(g.heat, -1.0, Density.uniform(g.source))
