"""Quantum gradients, Laplacians and heat semigroups.

A gradient is a dense matrix ``N`` from vectorized ``A`` to vectorized ``B``;
its adjoint for the trace inner products is ``W_A^{-1} N^H W_B``.  The
Laplacian ``Delta = N* N`` is self-adjoint for ``<.,.>_tau``, so it is
diagonalized once in the symmetric form ``W_A^{1/2} Delta W_A^{-1/2}`` and the
cache serves heat flows, kernel projections and spectral gaps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .algebra import AlgebraDescriptor, AlgebraError, Density, Element, RANK_TOL, inner
from .bimodule import AntiLinearInvolution, BimoduleStructure, block_embedding, direct_sum_bimodule


def _left_mult(A: AlgebraDescriptor, D: Element) -> np.ndarray:
    M = np.zeros((A.dim, A.dim), dtype=complex)
    for l, n in enumerate(A.block_dims):
        s = A.block_slice(l)
        M[s, s] = np.kron(D.blocks[l], np.eye(n))
    return M


def _right_mult(A: AlgebraDescriptor, D: Element) -> np.ndarray:
    M = np.zeros((A.dim, A.dim), dtype=complex)
    for l, n in enumerate(A.block_dims):
        s = A.block_slice(l)
        M[s, s] = np.kron(np.eye(n), D.blocks[l].T)
    return M


@dataclass(frozen=True, eq=False)
class QuantumGradient:
    """Derivation ``A -> B`` for a bimodule structure.

    ``provenance`` is a JSON-friendly dict describing how the gradient was
    built; ``children`` holds the summands of a direct sum.
    """

    bimodule: BimoduleStructure
    nabla: np.ndarray
    provenance: dict = field(default_factory=lambda: {"kind": "custom"})
    children: tuple = ()

    def __post_init__(self):
        N = np.array(self.nabla, dtype=complex)
        if N.shape != (self.target.dim, self.source.dim):
            raise AlgebraError("gradient matrix has the wrong shape")
        N.setflags(write=False)
        object.__setattr__(self, "nabla", N)

    @property
    def source(self) -> AlgebraDescriptor:
        return self.bimodule.source

    @property
    def target(self) -> AlgebraDescriptor:
        return self.bimodule.target

    @cached_property
    def nabla_star(self) -> np.ndarray:
        N = self.nabla
        out = (N.conj().T * self.target.weight_vector) / self.source.weight_vector[:, None]
        out.setflags(write=False)
        return out

    @cached_property
    def laplacian(self) -> np.ndarray:
        L = self.nabla_star @ self.nabla
        L.setflags(write=False)
        return L

    @cached_property
    def heat(self) -> "HeatData":
        return HeatData(self)

    def apply(self, x: Element) -> Element:
        return self.target.from_vec(self.nabla @ x.vec)

    def apply_adjoint(self, u: Element) -> Element:
        return self.source.from_vec(self.nabla_star @ u.vec)

    def apply_laplacian(self, x: Element) -> Element:
        return self.source.from_vec(self.laplacian @ x.vec)

    def invariant_residuals(self, rng: np.random.Generator | None = None, n_samples: int = 8,
                            check_symmetry: bool = True) -> dict:
        """Largest relative violation of Leibniz, symmetry, adjointness and ``grad 1 = 0``."""
        rng = rng or np.random.default_rng(0)
        A, bm = self.source, self.bimodule
        scale = max(1.0, float(np.linalg.norm(self.nabla, 2)))
        res = {"leibniz": 0.0, "symmetry": 0.0, "adjoint": 0.0,
               "unit": self.apply(A.unit()).norm() / scale}
        for _ in range(n_samples):
            x, y = A.random_element(rng), A.random_element(rng)
            u = self.target.random_element(rng)
            lhs = self.apply(x @ y)
            rhs = bm.phi(x) @ self.apply(y) + self.apply(x) @ bm.psi(y)
            res["leibniz"] = max(res["leibniz"], (lhs - rhs).norm() / (scale * x.norm() * y.norm()))
            if check_symmetry:
                d = bm.gamma(self.apply(x)) - self.apply(x.adjoint())
                res["symmetry"] = max(res["symmetry"], d.norm() / (scale * x.norm()))
            a = inner(self.apply(x), u) - inner(x, self.apply_adjoint(u))
            res["adjoint"] = max(res["adjoint"], abs(a) / (scale * x.norm() * u.norm()))
        return res

    def check_invariants(self, tol: float = 1e-9, rng=None, check_symmetry: bool = True):
        res = self.invariant_residuals(rng, check_symmetry=check_symmetry)
        bad = {k: v for k, v in res.items() if v > tol}
        if bad:
            raise AlgebraError(f"gradient invariants violated: {bad}")
        return res

    def component(self, n: int) -> np.ndarray:
        """Rows of the ``n``-th summand of a direct sum (the whole matrix if ``N = 1``)."""
        if not self.children:
            if n != 0:
                raise IndexError("gradient has a single component")
            return self.nabla
        d = self.children[0].target.dim
        return self.nabla[n * d:(n + 1) * d]

    def to_json(self) -> dict:
        return dict(self.provenance)


def from_commutator(bm: BimoduleStructure, D: Element) -> QuantumGradient:
    """``grad x = i [D, x]`` on the canonical bimodule."""
    if not bm.is_canonical:
        raise AlgebraError("commutator gradients need the canonical bimodule")
    if not D.is_selfadjoint():
        raise AlgebraError("commutator generator must be self-adjoint")
    D = D.hermitian_part()
    A = bm.source
    N = 1j * (_left_mult(A, D) - _right_mult(A, D))
    return QuantumGradient(bm, N, {"kind": "commutator", "D": D.to_json()})


def from_twisted(bm: BimoduleStructure, D: Element, tol: float = 1e-10) -> QuantumGradient:
    """``grad x = i (D x - phi(x) D)`` for an odd self-adjoint ``D`` (``phi(D) = -D``)."""
    A = bm.source
    if bm.target != A or bm.psi.spec.get("kind") != "identity":
        raise AlgebraError("twisted gradients need B = A and psi = id")
    if not np.allclose(bm.phi.matrix @ bm.phi.matrix, np.eye(A.dim), atol=tol):
        raise AlgebraError("twisting automorphism must be involutive")
    if not D.is_selfadjoint():
        raise AlgebraError("twisted generator must be self-adjoint")
    if not (bm.phi(D) + D).allclose(A.zero(), tol * max(1.0, D.opnorm())):
        raise AlgebraError("twisted generator must be odd: phi(D) = -D")
    D = D.hermitian_part()
    N = 1j * (_left_mult(A, D) - _right_mult(A, D) @ bm.phi.matrix)
    return QuantumGradient(bm, N, {"kind": "twisted", "D": D.to_json()})


def markov_bimodule(K: np.ndarray, pi: np.ndarray):
    """Function algebras on states and on edges ``K(x, y) > 0``, ``x != y``."""
    n = K.shape[0]
    edges = [(x, y) for x in range(n) for y in range(n) if x != y and K[x, y] > 0]
    A = AlgebraDescriptor((1,) * n, tuple(pi), f"C({n})")
    B = AlgebraDescriptor((1,) * len(edges), tuple(K[x, y] * pi[x] for x, y in edges), f"C(E{len(edges)})")
    phi = block_embedding(A, B, [[[x, 1]] for x, _ in edges])
    psi = block_embedding(A, B, [[[y, 1]] for _, y in edges])
    G = np.zeros((B.dim, B.dim))
    index = {e: k for k, e in enumerate(edges)}
    reversible = np.allclose(pi[:, None] * K, (pi[:, None] * K).T, atol=1e-12)
    for k, (x, y) in enumerate(edges):
        if reversible:
            G[k, index[(y, x)]] = -1.0
        else:
            G[k, k] = 1.0
    gamma = AntiLinearInvolution(B, G, "markov_swap" if reversible else "pointwise_conjugation")
    return BimoduleStructure(A, B, phi, psi, gamma, "markov"), edges, reversible


def _stationary(K: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(K.T)
    k = int(np.argmin(np.abs(w - 1)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


def from_markov(K, pi=None, tol: float = 1e-10) -> QuantumGradient:
    """Discrete gradient ``grad F(x, y) = F(x) - F(y)`` on the edges of ``K``.

    For reversible kernels ``gamma(u)(x, y) = -conj(u(y, x))``, which makes the
    gradient symmetric.  Non-reversible kernels get pointwise conjugation and
    the symmetry check does not apply to them.
    """
    K = np.asarray(K, float)
    n = K.shape[0]
    if K.shape != (n, n) or np.any(K < -tol) or not np.allclose(K.sum(axis=1), 1, atol=1e-10):
        raise AlgebraError("kernel must be a row-stochastic matrix")
    reach = (K > 0).astype(int) + np.eye(n, dtype=int)
    if np.any(np.linalg.matrix_power(reach, n) == 0):
        raise AlgebraError("kernel is not irreducible")
    pi = _stationary(K) if pi is None else np.asarray(pi, float)
    if np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-10 or not np.allclose(pi @ K, pi, atol=1e-10):
        raise AlgebraError("pi must be a strictly positive stationary distribution")
    bm, edges, reversible = markov_bimodule(K, pi)
    N = bm.phi.matrix - bm.psi.matrix
    return QuantumGradient(bm, N, {"kind": "markov", "K": K.tolist(), "pi": pi.tolist(),
                                   "reversible": bool(reversible)})


def direct_sum(gradients: Sequence[QuantumGradient]) -> QuantumGradient:
    """Stack gradients sharing a bimodule structure into ``A -> B^N``."""
    gradients = list(gradients)
    if not gradients:
        raise AlgebraError("direct sum of no gradients")
    if len(gradients) == 1:
        return gradients[0]
    bm = gradients[0].bimodule
    for g in gradients[1:]:
        if (g.source != bm.source or g.target != bm.target
                or not np.array_equal(g.bimodule.phi.matrix, bm.phi.matrix)
                or not np.array_equal(g.bimodule.psi.matrix, bm.psi.matrix)):
            raise AlgebraError("direct sums need a shared bimodule structure")
    big = direct_sum_bimodule(bm, len(gradients))
    N = np.vstack([g.nabla for g in gradients])
    return QuantumGradient(big, N, {"kind": "direct_sum", "children": [g.provenance for g in gradients]},
                           tuple(gradients))


# -- heat semigroup ------------------------------------------------------------------------

class HeatData:
    """Eigen cache of the Laplacian of a gradient."""

    def __init__(self, gradient: QuantumGradient, rank_tol: float = RANK_TOL):
        self.gradient = gradient
        A = gradient.source
        self.algebra = A
        self.laplacian = gradient.laplacian
        s = np.sqrt(A.weight_vector)
        self._s = s
        H = s[:, None] * self.laplacian / s[None, :]
        H = (H + H.conj().T) / 2
        lam, V = np.linalg.eigh(H)
        top = max(float(lam.max()), 0.0)
        self.zero_tol = rank_tol * max(top, 1.0)
        lam = np.where(lam < self.zero_tol, 0.0, lam)
        self.eigenvalues = lam
        self._V = V
        K = V[:, lam == 0]
        self._kernel_sym = K @ K.conj().T
        self.kernel_projection = self._kernel_sym / s[:, None] * s[None, :]

    def _from_spectral(self, g) -> np.ndarray:
        s = self._s
        M = (self._V * g(self.eigenvalues)) @ self._V.conj().T
        return M / s[:, None] * s[None, :]

    def heat_matrix(self, t: float) -> np.ndarray:
        if t < 0:
            raise AlgebraError("heat flow needs t >= 0")
        return self._from_spectral(lambda lam: np.exp(-t * lam))

    @property
    def kernel_dim(self) -> int:
        return int(np.sum(self.eigenvalues == 0))

    @property
    def ergodic(self) -> bool:
        return self.kernel_dim == 1

    def kernel_basis(self) -> np.ndarray:
        """Columns: vectorized basis of ``ker Delta``, orthonormal for ``<.,.>_tau``."""
        return self._V[:, self.eigenvalues == 0] / self._s[:, None]

    def image_basis(self) -> np.ndarray:
        return self._V[:, self.eigenvalues > 0] / self._s[:, None]


def heat_apply(hd: HeatData, t: float, x: Element) -> Element:
    """``e^{-t Delta} x``."""
    return hd.algebra.from_vec(hd.heat_matrix(t) @ x.vec)


def heat_state(hd: HeatData, t: float, rho: Density) -> Density:
    return Density(heat_apply(hd, t, rho.element), 1e-9)


def fixed_part(hd: HeatData, rho: Density) -> Density:
    """Projection of a density onto ``ker Delta``."""
    x = hd.algebra.from_vec(hd.kernel_projection @ rho.vec)
    return Density(x, 1e-9)


def image_part(hd: HeatData, rho: Density | Element) -> Element:
    v = rho.vec
    return hd.algebra.from_vec(v - hd.kernel_projection @ v)


@dataclass(frozen=True)
class SpectralGap:
    value: float
    defined: bool
    smallest_nonzero: float | None


def spectral_gap(hd: HeatData) -> SpectralGap:
    """Reciprocal of the smallest nonzero Laplacian eigenvalue."""
    nz = hd.eigenvalues[hd.eigenvalues > 0]
    if nz.size == 0:
        return SpectralGap(float("inf"), False, None)
    m = float(nz.min())
    return SpectralGap(1.0 / m, True, m)


def state_spectral_gap(rho: Density, rank_tol: float = RANK_TOL) -> float:
    """``1 / min`` of the nonzero spectrum of a density on its support."""
    lam = rho.element.eigvalsh()
    lam = lam[lam > rank_tol * lam.max()]
    return float(1.0 / lam.min())


@dataclass(frozen=True)
class CommutationFit:
    lam: float
    residual: float
    relative_residual: float
    certified: bool


def commutation_lambda(g: QuantumGradient, n: int = 0, cert_tol: float = 1e-8) -> CommutationFit:
    """Least-squares ``lam`` in ``grad_n Delta = (Delta + lam) grad_n``.

    Both Laplacians act on ``A``, so the component must map ``A`` into a copy
    of ``A``.  Norms are Frobenius norms in trace-orthonormal coordinates.
    """
    A = g.source
    Nn = g.component(n)
    if Nn.shape[0] != A.dim:
        raise AlgebraError("commutation fit needs components that map A into A")
    comp_target = g.children[n].target if g.children else g.target
    if comp_target != A:
        raise AlgebraError("commutation fit needs components that map A into A")
    s = np.sqrt(A.weight_vector)
    N = s[:, None] * Nn / s[None, :]
    L = s[:, None] * g.laplacian / s[None, :]
    C = N @ L - L @ N
    nn = float(np.vdot(N, N).real)
    if nn == 0:
        return CommutationFit(0.0, 0.0, 0.0, True)
    lam = float(np.vdot(N, C).real / nn)
    R = C - lam * N
    res = float(np.linalg.norm(R))
    scale = float(np.linalg.norm(N, 2) * np.linalg.norm(L, 2))
    rel = res / max(scale, 1e-300)
    return CommutationFit(lam, res, rel, bool(res <= cert_tol * max(scale, 1.0)))


def compressed_invariance_residual(g: QuantumGradient, p: Element, rng=None, n_samples: int = 4) -> float:
    """``max ||Delta(pxp) - p Delta(pxp) p||`` over random ``x``."""
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for _ in range(n_samples):
        x = g.source.random_element(rng)
        y = g.apply_laplacian(p @ x @ p)
        worst = max(worst, (y - p @ y @ p).norm() / max(1.0, x.norm()))
    return worst
