"""Finite tracial algebras realized as weighted direct sums of matrix blocks.

An algebra ``A = M_{n_1} + ... + M_{n_L}`` carries the faithful trace
``tau(x) = sum_l C_l tr(x_l)``.  Elements are stored block by block, and every
numerical routine in the package works on the *vectorized* form obtained by
concatenating the row-major flattening of each block.  In that coordinate
system the trace inner product reads ``<x, y> = vec(x)^H diag(w) vec(y)`` with
``w`` repeating ``C_l`` over the ``n_l**2`` entries of block ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

SA_TOL = 1e-10
RANK_TOL = 1e-9
DEGENERACY_TOL = 1e-9


class AlgebraError(ValueError):
    """Raised on shape mismatches and violated structural preconditions."""


@dataclass(frozen=True)
class AlgebraDescriptor:
    """Block structure and trace weights of a finite tracial algebra.

    Parameters
    ----------
    block_dims : tuple of int
        Sizes ``n_l`` of the matrix blocks.
    trace_weights : tuple of float
        Strictly positive weights ``C_l``.
    label : str
        Free-form name, carried into reports.
    """

    block_dims: tuple
    trace_weights: tuple
    label: str = ""

    def __post_init__(self):
        dims = tuple(int(n) for n in self.block_dims)
        weights = tuple(float(c) for c in self.trace_weights)
        if not dims:
            raise AlgebraError("an algebra needs at least one block")
        if len(dims) != len(weights):
            raise AlgebraError("one trace weight per block is required")
        if any(n < 1 for n in dims):
            raise AlgebraError(f"block sizes must be positive, got {dims}")
        if any(not np.isfinite(c) or c <= 0 for c in weights):
            raise AlgebraError(f"trace weights must be strictly positive, got {weights}")
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "trace_weights", weights)

    @cached_property
    def offsets(self) -> tuple:
        out = [0]
        for n in self.block_dims:
            out.append(out[-1] + n * n)
        return tuple(out)

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    @property
    def n_blocks(self) -> int:
        return len(self.block_dims)

    @cached_property
    def weight_vector(self) -> np.ndarray:
        w = np.concatenate([np.full(n * n, c) for n, c in zip(self.block_dims, self.trace_weights)])
        w.setflags(write=False)
        return w

    def block_slice(self, l: int) -> slice:
        return slice(self.offsets[l], self.offsets[l + 1])

    # -- element construction -------------------------------------------------
    def element(self, blocks: Sequence) -> "Element":
        return Element(self, tuple(np.asarray(b, dtype=complex) for b in blocks))

    def zero(self) -> "Element":
        return self.element([np.zeros((n, n)) for n in self.block_dims])

    def unit(self) -> "Element":
        return self.element([np.eye(n) for n in self.block_dims])

    def from_vec(self, v) -> "Element":
        v = np.asarray(v, dtype=complex)
        if v.shape != (self.dim,):
            raise AlgebraError(f"vector of length {self.dim} expected, got shape {v.shape}")
        return self.element([v[self.block_slice(l)].reshape(n, n) for l, n in enumerate(self.block_dims)])

    def matrix_unit(self, l: int, i: int, j: int) -> "Element":
        blocks = [np.zeros((n, n), dtype=complex) for n in self.block_dims]
        blocks[l][i, j] = 1.0
        return self.element(blocks)

    def total_trace(self) -> float:
        """``tau(1)``."""
        return float(sum(c * n for n, c in zip(self.block_dims, self.trace_weights)))

    def random_element(self, rng: np.random.Generator, hermitian: bool = False) -> "Element":
        blocks = []
        for n in self.block_dims:
            b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            if hermitian:
                b = (b + b.conj().T) / 2
            blocks.append(b)
        return self.element(blocks)

    def random_density(self, rng: np.random.Generator, rank: int | None = None) -> "Density":
        """Random density; ``rank`` caps the rank within every block."""
        blocks = []
        for n in self.block_dims:
            r = n if rank is None else max(1, min(rank, n))
            g = rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))
            blocks.append(g @ g.conj().T)
        x = self.element(blocks)
        return Density(x * (1.0 / trace(x).real))

    # -- coordinates ----------------------------------------------------------
    @cached_property
    def sa_basis(self) -> np.ndarray:
        """Columns: vectorized self-adjoint basis, orthonormal for Re<.,.>_tau."""
        cols = []
        for l, n in enumerate(self.block_dims):
            s = 1.0 / np.sqrt(self.trace_weights[l])
            off = self.offsets[l]
            for i in range(n):
                v = np.zeros(self.dim, dtype=complex)
                v[off + i * n + i] = s
                cols.append(v)
                for j in range(i + 1, n):
                    v = np.zeros(self.dim, dtype=complex)
                    v[off + i * n + j] = v[off + j * n + i] = s / np.sqrt(2)
                    cols.append(v)
                    v = np.zeros(self.dim, dtype=complex)
                    v[off + i * n + j] = 1j * s / np.sqrt(2)
                    v[off + j * n + i] = -1j * s / np.sqrt(2)
                    cols.append(v)
        out = np.array(cols).T
        out.setflags(write=False)
        return out

    @cached_property
    def adjoint_permutation(self) -> np.ndarray:
        """Index map ``perm`` with ``vec(x*) = conj(vec(x)[perm])``."""
        perm = np.empty(self.dim, dtype=int)
        for l, n in enumerate(self.block_dims):
            idx = np.arange(n * n).reshape(n, n)
            perm[self.block_slice(l)] = self.offsets[l] + idx.T.ravel()
        perm.setflags(write=False)
        return perm

    # -- serialization -----------------------------------------------------------
    def to_json(self) -> dict:
        return {"blocks": list(self.block_dims), "weights": list(self.trace_weights), "label": self.label}

    @classmethod
    def from_json(cls, data: dict) -> "AlgebraDescriptor":
        try:
            return cls(tuple(data["blocks"]), tuple(data["weights"]), str(data.get("label", "")))
        except KeyError as exc:
            raise AlgebraError(f"algebra JSON is missing {exc}") from None


@dataclass(frozen=True, eq=False)
class Element:
    """Block-diagonal element of an :class:`AlgebraDescriptor`."""

    algebra: AlgebraDescriptor
    blocks: tuple

    def __post_init__(self):
        if len(self.blocks) != self.algebra.n_blocks:
            raise AlgebraError(f"expected {self.algebra.n_blocks} blocks, got {len(self.blocks)}")
        frozen = []
        for b, n in zip(self.blocks, self.algebra.block_dims):
            b = np.array(b, dtype=complex)
            if b.shape != (n, n):
                raise AlgebraError(f"block of shape {b.shape} where ({n}, {n}) was expected")
            b.setflags(write=False)
            frozen.append(b)
        object.__setattr__(self, "blocks", tuple(frozen))

    @cached_property
    def vec(self) -> np.ndarray:
        v = np.concatenate([b.ravel() for b in self.blocks])
        v.setflags(write=False)
        return v

    def _check(self, other: "Element"):
        if not isinstance(other, Element) or other.algebra != self.algebra:
            raise AlgebraError("elements belong to different algebras")

    def __add__(self, other):
        self._check(other)
        return Element(self.algebra, tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other):
        self._check(other)
        return Element(self.algebra, tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def __neg__(self):
        return Element(self.algebra, tuple(-a for a in self.blocks))

    def __mul__(self, scalar):
        if isinstance(scalar, Element):
            raise TypeError("use @ for the algebra product")
        return Element(self.algebra, tuple(scalar * a for a in self.blocks))

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check(other)
        return Element(self.algebra, tuple(a @ b for a, b in zip(self.blocks, other.blocks)))

    def adjoint(self) -> "Element":
        return Element(self.algebra, tuple(a.conj().T for a in self.blocks))

    @property
    def H(self) -> "Element":
        return self.adjoint()

    def norm(self) -> float:
        """Trace norm ``||x||_tau = tau(x* x)**0.5``."""
        return float(np.sqrt(max(inner(self, self).real, 0.0)))

    def opnorm(self) -> float:
        return max(float(np.linalg.norm(b, 2)) if b.size else 0.0 for b in self.blocks)

    def is_selfadjoint(self, tol: float = SA_TOL) -> bool:
        scale = max(self.opnorm(), 1.0)
        return all(np.abs(b - b.conj().T).max(initial=0.0) <= tol * scale for b in self.blocks)

    def hermitian_part(self) -> "Element":
        return Element(self.algebra, tuple((b + b.conj().T) / 2 for b in self.blocks))

    def eigvalsh(self) -> np.ndarray:
        return np.concatenate([np.linalg.eigvalsh(b) for b in self.blocks])

    def allclose(self, other: "Element", atol: float = 1e-10) -> bool:
        self._check(other)
        return bool(np.allclose(self.vec, other.vec, atol=atol, rtol=0))

    def to_json(self) -> list:
        return [[[[float(z.real), float(z.imag)] for z in row] for row in b] for b in self.blocks]

    @classmethod
    def from_json(cls, algebra: AlgebraDescriptor, data: list) -> "Element":
        blocks = [np.array([[complex(re, im) for re, im in row] for row in b], dtype=complex).reshape(n, n)
                  for b, n in zip(data, algebra.block_dims)]
        return algebra.element(blocks)

    def __repr__(self):
        return f"Element({self.algebra.label or self.algebra.block_dims}, dim={self.algebra.dim})"


class Density:
    """Positive, unit-trace element representing a state ``mu = tau(rho .)``.

    Inputs within ``tolerance`` (relative to the operator norm) of being
    self-adjoint are symmetrized; anything further off is rejected.
    """

    __slots__ = ("element", "tolerance")

    def __init__(self, element: Element, tolerance: float = SA_TOL):
        if not element.is_selfadjoint(tolerance):
            raise AlgebraError("density is not self-adjoint")
        x = element.hermitian_part()
        scale = max(x.opnorm(), 1.0)
        if x.eigvalsh().min() < -tolerance * scale:
            raise AlgebraError("density is not positive semidefinite")
        tr = trace(x)
        if abs(tr - 1.0) > max(tolerance, 1e-12) * max(1.0, x.algebra.total_trace()) * 10:
            raise AlgebraError(f"density has trace {tr.real:.12g}, expected 1")
        object.__setattr__(self, "element", x)
        object.__setattr__(self, "tolerance", float(tolerance))

    def __setattr__(self, name, value):
        raise AttributeError("Density is immutable")

    @classmethod
    def normalized(cls, x: Element, tolerance: float = SA_TOL) -> "Density":
        t = trace(x).real
        if t <= 0:
            raise AlgebraError("cannot normalize an element with nonpositive trace")
        return cls(x * (1.0 / t), tolerance)

    @classmethod
    def uniform(cls, algebra: AlgebraDescriptor) -> "Density":
        return cls(algebra.unit() * (1.0 / algebra.total_trace()))

    @property
    def algebra(self) -> AlgebraDescriptor:
        return self.element.algebra

    @property
    def vec(self) -> np.ndarray:
        return self.element.vec

    def min_eig(self) -> float:
        return float(self.element.eigvalsh().min())

    def __repr__(self):
        return f"Density(dim={self.algebra.dim}, min_eig={self.min_eig():.3g})"


# -- basic functionals ----------------------------------------------------------

def trace(x: Element) -> complex:
    """Weighted block trace ``sum_l C_l tr(x_l)``."""
    return complex(sum(c * np.trace(b) for c, b in zip(x.algebra.trace_weights, x.blocks)))


def inner(x: Element, y: Element) -> complex:
    """Trace inner product ``tau(x* y)``, antilinear in ``x``."""
    x._check(y)
    return complex(np.vdot(x.vec, x.algebra.weight_vector * y.vec))


def _cluster_mean(lam: np.ndarray, tol: float) -> np.ndarray:
    """Snap clusters of nearly equal sorted eigenvalues to their mean."""
    if lam.size < 2:
        return lam
    scale = max(1.0, float(np.abs(lam).max()))
    out = lam.copy()
    start = 0
    for k in range(1, lam.size + 1):
        if k == lam.size or lam[k] - lam[k - 1] > tol * scale:
            if k - start > 1:
                out[start:k] = lam[start:k].mean()
            start = k
    return out


def eigh_merged(b: np.ndarray, tol: float = DEGENERACY_TOL):
    """Hermitian eigendecomposition with near-degenerate eigenvalues merged.

    Merging makes anything computed from full eigenprojections independent
    of how the solver happened to split a degenerate eigenspace.
    """
    lam, U = np.linalg.eigh((b + b.conj().T) / 2)
    return _cluster_mean(lam, tol), U


def func_calc(x: Element, g: Callable, tol: float = SA_TOL) -> Element:
    """Apply a scalar function to a self-adjoint element blockwise."""
    if not x.is_selfadjoint(tol):
        raise AlgebraError("functional calculus needs a self-adjoint element")
    blocks = []
    for b in x.blocks:
        try:
            lam, U = eigh_merged(b)
        except np.linalg.LinAlgError as exc:
            raise AlgebraError(f"eigendecomposition failed: {exc}") from None
        gl = np.asarray(g(lam))
        blocks.append((U * gl) @ U.conj().T)
    return x.algebra.element(blocks)


def is_projection(p: Element, tol: float = SA_TOL) -> bool:
    return p.is_selfadjoint(tol) and (p @ p - p).opnorm() <= tol * max(1.0, p.opnorm()) * 10


def compress(x: Element, p: Element) -> Element:
    """Return ``p x p`` for a projection ``p``."""
    if not is_projection(p):
        raise AlgebraError("compression needs a projection")
    return p @ x @ p


def support_projection(rho: Density | Element, rank_tol: float = RANK_TOL) -> Element:
    """Spectral projection of a positive element onto eigenvalues above ``rank_tol * max``."""
    x = rho.element if isinstance(rho, Density) else rho
    lam_max = max(float(x.eigvalsh().max()), 0.0)
    cut = rank_tol * lam_max
    blocks = []
    for b in x.blocks:
        lam, U = np.linalg.eigh((b + b.conj().T) / 2)
        keep = U[:, lam > cut]
        blocks.append(keep @ keep.conj().T)
    return x.algebra.element(blocks)


def entropy_value(x: Element, rank_tol: float = RANK_TOL) -> float:
    """``tau(x log x)`` over the support of a positive element."""
    lam_all = x.eigvalsh()
    cut = rank_tol * max(float(lam_all.max()), 0.0)
    total = 0.0
    for c, b in zip(x.algebra.trace_weights, x.blocks):
        lam = np.linalg.eigvalsh((b + b.conj().T) / 2)
        lam = lam[lam > cut]
        total += c * float(np.sum(lam * np.log(lam)))
    return total


# -- subalgebras ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubalgebraBasis:
    """A *-subalgebra ``C`` of ``parent`` given by a spanning basis and its unit."""

    parent: AlgebraDescriptor
    basis: tuple
    unit: Element
    tol: float = 1e-9
    _gram_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        basis = tuple(self.basis)
        object.__setattr__(self, "basis", basis)
        if not basis:
            raise AlgebraError("empty subalgebra basis")
        for b in basis + (self.unit,):
            if b.algebra != self.parent:
                raise AlgebraError("basis element outside the parent algebra")
        M = self.matrix
        gram = M.conj().T @ (self.parent.weight_vector[:, None] * M)
        ev = np.linalg.eigvalsh(gram)
        if ev.min() <= self.tol * max(ev.max(), 1.0):
            raise AlgebraError("degenerate Gram matrix: basis is not linearly independent")
        object.__setattr__(self, "_gram_inv", np.linalg.inv(gram))
        self.validate()

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.array([b.vec for b in self.basis]).T

    def _residual(self, y: Element) -> float:
        return (y - self.project(y)).norm()

    def validate(self):
        scale = max(b.norm() for b in self.basis) ** 2
        for a in self.basis:
            if self._residual(a.adjoint()) > self.tol * max(1.0, a.norm()):
                raise AlgebraError("subalgebra is not closed under the adjoint")
            for b in self.basis:
                if self._residual(a @ b) > self.tol * max(1.0, scale):
                    raise AlgebraError("subalgebra is not closed under the product")
        for b in self.basis:
            if not (self.unit @ b).allclose(b, 1e-9) or not (b @ self.unit).allclose(b, 1e-9):
                raise AlgebraError("declared unit does not act as the identity on the subalgebra")

    def project(self, x: Element) -> Element:
        """Orthogonal projection onto ``span(basis)`` in ``<.,.>_tau``."""
        M = self.matrix
        coef = self._gram_inv @ (M.conj().T @ (self.parent.weight_vector * x.vec))
        return self.parent.from_vec(M @ coef)

    @property
    def is_unital(self) -> bool:
        return self.unit.allclose(self.parent.unit(), 1e-12)


def project_subalgebra(x: Element, C: SubalgebraBasis) -> Element:
    """Conditional expectation onto the subalgebra ``C`` (Gram projection)."""
    if x.algebra != C.parent:
        raise AlgebraError("element and subalgebra live in different algebras")
    return C.project(x)


def kappa(x: Element, C: SubalgebraBasis) -> complex:
    """Mass-difference coefficient ``tau((1 - pi_C) x) / tau(1_A - 1_C)``."""
    one = C.parent.unit()
    denom = trace(one - C.unit)
    if abs(denom) < 1e-14:
        return 0.0j
    return trace(x - C.project(x)) / denom


def unitization(C: SubalgebraBasis) -> SubalgebraBasis:
    """``C*(C, 1_A)``: adjoin the complement ``1_A - 1_C`` to a non-unital subalgebra."""
    if C.is_unital:
        return C
    comp = C.parent.unit() - C.unit
    return SubalgebraBasis(C.parent, C.basis + (comp,), C.parent.unit(), C.tol)


def project_nonunital(x: Element, C: SubalgebraBasis) -> Element:
    """Projection onto ``C`` assembled from the unitization and the mass difference."""
    U = unitization(C)
    comp = C.parent.unit() - C.unit
    return U.project(x) - kappa(x, C) * comp


def diagonal_subalgebra(algebra: AlgebraDescriptor) -> SubalgebraBasis:
    basis = [algebra.matrix_unit(l, i, i) for l, n in enumerate(algebra.block_dims) for i in range(n)]
    return SubalgebraBasis(algebra, tuple(basis), algebra.unit())


def corner_subalgebra(algebra: AlgebraDescriptor, p: Element) -> SubalgebraBasis:
    """The compressed algebra ``pAp`` as a (generally non-unital) subalgebra."""
    if not is_projection(p):
        raise AlgebraError("corner needs a projection")
    basis = []
    for l, b in enumerate(p.blocks):
        lam, U = np.linalg.eigh(b)
        Q = U[:, lam > 0.5]
        for i in range(Q.shape[1]):
            for j in range(Q.shape[1]):
                blocks = [np.zeros((n, n), dtype=complex) for n in algebra.block_dims]
                blocks[l] = np.outer(Q[:, i], Q[:, j].conj())
                basis.append(algebra.element(blocks))
    return SubalgebraBasis(algebra, tuple(basis), p)


def image_subalgebra(source: AlgebraDescriptor, target: AlgebraDescriptor, embed: Callable) -> SubalgebraBasis:
    """Subalgebra ``embed(source)`` of ``target`` for an injective *-homomorphism."""
    basis = [embed(source.matrix_unit(l, i, j))
             for l, n in enumerate(source.block_dims) for i in range(n) for j in range(n)]
    return SubalgebraBasis(target, tuple(basis), embed(source.unit()))
