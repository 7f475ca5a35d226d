import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qot.algebra import (AlgebraDescriptor, AlgebraError, Density, SubalgebraBasis, corner_subalgebra,
                         diagonal_subalgebra, entropy_value, func_calc, image_subalgebra, inner, is_projection,
                         kappa, project_nonunital, support_projection, trace, unitization)
from qot.bimodule import block_embedding

algebras = st.builds(
    lambda dims, ws: AlgebraDescriptor(tuple(dims), tuple(ws[: len(dims)])),
    st.lists(st.integers(1, 3), min_size=1, max_size=3),
    st.lists(st.floats(0.1, 3.0), min_size=3, max_size=3),
)


def test_descriptor_validation():
    with pytest.raises(AlgebraError):
        AlgebraDescriptor((), ())
    with pytest.raises(AlgebraError):
        AlgebraDescriptor((2,), (0.0,))
    with pytest.raises(AlgebraError):
        AlgebraDescriptor((2, 1), (1.0,))
    A = AlgebraDescriptor((2, 1), (0.5, 2.0))
    assert A.dim == 5 and A.total_trace() == pytest.approx(3.0)
    assert AlgebraDescriptor.from_json(A.to_json()) == A


def test_element_shape_and_algebra_checks():
    A = AlgebraDescriptor((2,), (1.0,))
    B = AlgebraDescriptor((2,), (2.0,))
    with pytest.raises(AlgebraError):
        A.element([np.eye(3)])
    with pytest.raises(AlgebraError):
        A.unit() + B.unit()


@settings(max_examples=30, deadline=None)
@given(algebras, st.integers(0, 2 ** 31))
def test_sa_basis_is_orthonormal(A, seed):
    S = A.sa_basis
    gram = (S.conj().T @ (A.weight_vector[:, None] * S)).real
    assert np.allclose(gram, np.eye(A.dim), atol=1e-12)
    rng = np.random.default_rng(seed)
    x = A.random_element(rng, hermitian=True)
    # self-adjoint elements are real combinations of the basis
    c = (S.conj().T @ (A.weight_vector * x.vec))
    assert np.abs(c.imag).max() < 1e-12
    assert np.allclose(S @ c.real, x.vec)


@settings(max_examples=30, deadline=None)
@given(algebras, st.integers(0, 2 ** 31))
def test_trace_is_tracial_and_inner_is_positive(A, seed):
    rng = np.random.default_rng(seed)
    x, y = A.random_element(rng), A.random_element(rng)
    assert abs(trace(x @ y) - trace(y @ x)) < 1e-10
    assert abs(inner(x, y) - trace(x.adjoint() @ y)) < 1e-10
    assert inner(x, x).real > 0 and abs(inner(x, x).imag) < 1e-12
    # hand formula for the weighted trace
    manual = sum(c * np.trace(b) for c, b in zip(A.trace_weights, x.blocks))
    assert abs(trace(x) - manual) < 1e-12


def test_adjoint_permutation():
    A = AlgebraDescriptor((3, 2), (1.0, 1.0))
    x = A.random_element(np.random.default_rng(0))
    assert np.allclose(x.adjoint().vec, np.conj(x.vec[A.adjoint_permutation]))


def test_func_calc_matches_eigendecomposition():
    A = AlgebraDescriptor((3, 2), (1.0, 0.5))
    x = A.random_element(np.random.default_rng(1), hermitian=True)
    y = func_calc(x, np.exp)
    from scipy.linalg import expm
    for b, yb in zip(x.blocks, y.blocks):
        assert np.allclose(expm(b), yb)
    with pytest.raises(AlgebraError):
        func_calc(A.random_element(np.random.default_rng(2)), np.exp)


def test_density_checks():
    A = AlgebraDescriptor((2,), (1.0,))
    with pytest.raises(AlgebraError):
        Density(A.element([np.diag([1.5, -0.5])]))
    with pytest.raises(AlgebraError):
        Density(A.element([np.diag([1.0, 1.0])]))
    with pytest.raises(AlgebraError):
        Density(A.element([[[0.5, 1.0], [0.0, 0.5]]]))
    rho = Density.uniform(A)
    assert trace(rho.element) == pytest.approx(1.0)
    with pytest.raises(AttributeError):
        rho.element = None


def test_entropy_and_support():
    A = AlgebraDescriptor((2, 1), (0.5, 1.0))
    x = A.element([np.diag([0.6, 0.0]), [[0.7]]])
    # tau(x log x) with zero eigenvalues dropped
    assert entropy_value(x) == pytest.approx(0.5 * 0.6 * np.log(0.6) + 0.7 * np.log(0.7))
    p = support_projection(x)
    assert is_projection(p)
    assert np.allclose(p.blocks[0], np.diag([1, 0])) and np.allclose(p.blocks[1], [[1]])


def test_subalgebra_projection_is_conditional_expectation():
    rng = np.random.default_rng(3)
    A = AlgebraDescriptor((2,), (1.0,))
    T = AlgebraDescriptor((4,), (0.5,))
    emb = block_embedding(A, T, [[[0, 2]]])
    C = image_subalgebra(A, T, emb)
    assert C.is_unital
    x = T.random_element(rng)
    Ex = C.project(x)
    for b in C.basis:
        assert abs(inner(b, x) - inner(b, Ex)) < 1e-12
    # bimodule property E(c x c') = c E(x) c'
    c = emb(A.random_element(rng))
    assert (C.project(c @ x @ c)).allclose(c @ Ex @ c, 1e-10)


def test_nonunital_corner_and_unitization():
    rng = np.random.default_rng(4)
    A = AlgebraDescriptor((3,), (1.0,))
    p = A.element([np.diag([1.0, 1.0, 0.0])])
    C = corner_subalgebra(A, p)
    assert not C.is_unital
    U = unitization(C)
    assert U.is_unital and len(U.basis) == len(C.basis) + 1
    x = A.random_element(rng)
    # the non-unital projection lands in C and matches compression on the corner
    y = project_nonunital(x, C)
    z = y + kappa(x, C) * (A.unit() - p)
    assert z.allclose(U.project(x), 1e-12)
    assert (p @ U.project(x) @ p).allclose(p @ x @ p, 1e-12)


def test_subalgebra_rejects_non_algebras():
    A = AlgebraDescriptor((2,), (1.0,))
    x = A.element([[[0, 1], [0, 0]]])
    with pytest.raises(AlgebraError):
        SubalgebraBasis(A, (x,), A.unit())
    D = diagonal_subalgebra(A)
    assert len(D.basis) == 2
