"""Bimodule structures ``(phi, psi, gamma)`` and two-variable functional calculus.

Linear maps between algebras are dense complex matrices acting on the
vectorized coordinates of :mod:`qot.algebra`.  The antilinear involution
``gamma`` is stored as a complex matrix ``G`` with ``gamma(u) = G conj(vec u)``,
which is the same information as a real-linear map on realified coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebra import (AlgebraDescriptor, AlgebraError, Element, eigh_merged, is_projection,
                      DEGENERACY_TOL)

HOM_TOL = 1e-9


def _basis_images(source: AlgebraDescriptor, fn: Callable[[Element], Element]) -> np.ndarray:
    cols = []
    for l, n in enumerate(source.block_dims):
        for i in range(n):
            for j in range(n):
                cols.append(fn(source.matrix_unit(l, i, j)).vec)
    return np.array(cols).T


@dataclass(frozen=True, eq=False)
class StarHom:
    """A *-homomorphism ``A -> B`` stored as a dense matrix on vectorized elements.

    ``spec`` carries a JSON-friendly structural description.  For block
    embeddings it lists, for every block of the target, the source blocks
    placed along its diagonal as ``[source_block, multiplicity]`` pairs (the
    summand is ``x_s (x) I_m``); ``[-1, size]`` pads with a zero block.
    """

    source: AlgebraDescriptor
    target: AlgebraDescriptor
    matrix: np.ndarray
    spec: dict = field(default_factory=lambda: {"kind": "matrix"})

    def __post_init__(self):
        M = np.array(self.matrix, dtype=complex)
        if M.shape != (self.target.dim, self.source.dim):
            raise AlgebraError(f"homomorphism matrix has shape {M.shape}, "
                               f"expected {(self.target.dim, self.source.dim)}")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    def __call__(self, x: Element) -> Element:
        if x.algebra != self.source:
            raise AlgebraError("argument is not in the source algebra")
        return self.target.from_vec(self.matrix @ x.vec)

    def adjoint_matrix(self) -> np.ndarray:
        """Matrix of the trace adjoint ``phi*: B -> A``."""
        return (self.matrix.conj().T * self.target.weight_vector) / self.source.weight_vector[:, None]

    def apply_adjoint(self, u: Element) -> Element:
        return self.source.from_vec(self.adjoint_matrix() @ u.vec)

    @property
    def is_unital(self) -> bool:
        return self(self.source.unit()).allclose(self.target.unit(), 1e-10)

    def check(self, tol: float = HOM_TOL, unital: bool = True, rng=None):
        """Verify *-preservation and multiplicativity on matrix-unit pairs.

        All pairs are checked for small sources; larger ones use a seeded
        random subset of 400 pairs.
        """
        A, B = self.source, self.target
        units = [(l, i, j) for l, n in enumerate(A.block_dims) for i in range(n) for j in range(n)]
        where = {u: k for k, u in enumerate(units)}
        img = [self(A.matrix_unit(*u)) for u in units]
        zero = B.zero()
        pairs = [(a, b) for a in range(len(units)) for b in range(len(units))]
        if len(pairs) > 1296:
            rng = rng or np.random.default_rng(0)
            pairs = [pairs[k] for k in rng.choice(len(pairs), 400, replace=False)]
        for a, b in pairs:
            (l, i, j), (m, k, r) = units[a], units[b]
            prod = img[a] @ img[b]
            expect = img[where[(l, i, r)]] if (l == m and j == k) else zero
            if not prod.allclose(expect, tol):
                raise AlgebraError("map is not multiplicative")
        for (l, i, j), e in zip(units, img):
            if not img[where[(l, j, i)]].allclose(e.adjoint(), tol):
                raise AlgebraError("map does not preserve adjoints")
        if unital and not self.is_unital:
            raise AlgebraError("map is not unital")

    def to_json(self) -> dict:
        if self.spec.get("kind") in ("identity", "diagonal_embedding"):
            return dict(self.spec)
        return {"kind": "matrix", "source": self.source.to_json(), "target": self.target.to_json(),
                "data": [[[float(z.real), float(z.imag)] for z in row] for row in self.matrix]}

    @classmethod
    def from_json(cls, data: dict, source: AlgebraDescriptor, target: AlgebraDescriptor) -> "StarHom":
        kind = data.get("kind")
        if kind == "identity":
            return identity_hom(source)
        if kind == "diagonal_embedding":
            return block_embedding(source, target, data["target_blocks"])
        if kind == "matrix":
            M = np.array([[complex(a, b) for a, b in row] for row in data["data"]])
            return cls(source, target, M)
        raise AlgebraError(f"unknown homomorphism kind {kind!r}")


def identity_hom(algebra: AlgebraDescriptor) -> StarHom:
    return StarHom(algebra, algebra, np.eye(algebra.dim), {"kind": "identity"})


def hom_from_function(source: AlgebraDescriptor, target: AlgebraDescriptor, fn, spec=None,
                      unital: bool = True) -> StarHom:
    """Tabulate ``fn`` on matrix units and validate the homomorphism axioms."""
    h = StarHom(source, target, _basis_images(source, fn), spec or {"kind": "matrix"})
    h.check(unital=unital)
    return h


def block_embedding(source: AlgebraDescriptor, target: AlgebraDescriptor,
                    target_blocks: Sequence[Sequence], unital: bool | None = None) -> StarHom:
    """Diagonal block embedding described by ``target_blocks`` (see :class:`StarHom`)."""
    layout = [[(int(s), int(m)) for s, m in tb] for tb in target_blocks]
    if len(layout) != target.n_blocks:
        raise AlgebraError("one layout entry per target block is required")

    def fn(x: Element) -> Element:
        blocks = []
        for tb, n in zip(layout, target.block_dims):
            parts = []
            for s, m in tb:
                parts.append(np.zeros((m, m)) if s < 0 else np.kron(x.blocks[s], np.eye(m)))
            size = sum(p.shape[0] for p in parts)
            if size != n:
                raise AlgebraError(f"embedding layout fills {size} of {n} rows")
            out = np.zeros((n, n), dtype=complex)
            k = 0
            for p in parts:
                out[k:k + p.shape[0], k:k + p.shape[0]] = p
                k += p.shape[0]
            blocks.append(out)
        return target.element(blocks)

    if unital is None:
        unital = all(s >= 0 for tb in layout for s, _ in tb)
    spec = {"kind": "diagonal_embedding", "target_blocks": [[list(p) for p in tb] for tb in layout]}
    return hom_from_function(source, target, fn, spec, unital=unital)


def conjugation_hom(algebra: AlgebraDescriptor, V_blocks: Sequence[np.ndarray]) -> StarHom:
    """Inner automorphism ``x -> V x V*`` for a blockwise unitary ``V``."""
    V = [np.asarray(v, dtype=complex) for v in V_blocks]
    for v in V:
        if not np.allclose(v @ v.conj().T, np.eye(v.shape[0]), atol=1e-12):
            raise AlgebraError("conjugation needs a unitary")
    return hom_from_function(algebra, algebra,
                             lambda x: algebra.element([v @ b @ v.conj().T for v, b in zip(V, x.blocks)]))


# -- antilinear involutions ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AntiLinearInvolution:
    """Antilinear map ``u -> G conj(vec u)`` on a target algebra."""

    algebra: AlgebraDescriptor
    matrix: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        G = np.array(self.matrix, dtype=complex)
        if G.shape != (self.algebra.dim, self.algebra.dim):
            raise AlgebraError("involution matrix has the wrong shape")
        G.setflags(write=False)
        object.__setattr__(self, "matrix", G)

    def __call__(self, u: Element) -> Element:
        return self.algebra.from_vec(self.matrix @ np.conj(u.vec))

    def realified(self) -> np.ndarray:
        """The same map as a real-linear matrix on ``[Re vec u, Im vec u]``."""
        G = self.matrix
        return np.block([[G.real, G.imag], [G.imag, -G.real]])


def adjoint_involution(algebra: AlgebraDescriptor) -> AntiLinearInvolution:
    G = np.zeros((algebra.dim, algebra.dim))
    G[np.arange(algebra.dim), algebra.adjoint_permutation] = 1.0
    return AntiLinearInvolution(algebra, G, "adjoint")


def twisted_involution(phi: StarHom, sign: float = 1.0) -> AntiLinearInvolution:
    """``u -> sign * phi(u*)`` for an involutive automorphism ``phi`` of ``A``.

    Both signs give an isometric involution intertwining the ``(phi, id)``
    action.  Gradients ``i(D x - phi(x) D)`` with ``phi(D) = -D`` are symmetric
    for ``sign = -1``.
    """
    if sign not in (1.0, -1.0):
        raise AlgebraError("sign must be +1 or -1")
    A = phi.source
    P = np.zeros((A.dim, A.dim))
    P[np.arange(A.dim), A.adjoint_permutation] = 1.0
    return AntiLinearInvolution(A, sign * (phi.matrix @ P), "twisted" if sign > 0 else "twisted_odd")


# -- superoperators ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Superoperator:
    """Dense linear map on vectorized elements of ``algebra``."""

    algebra: AlgebraDescriptor
    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=complex)
        if M.shape != (self.algebra.dim, self.algebra.dim):
            raise AlgebraError("superoperator has the wrong shape")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    def __call__(self, u: Element) -> Element:
        if u.algebra != self.algebra:
            raise AlgebraError("superoperator applied outside its algebra")
        return self.algebra.from_vec(self.matrix @ u.vec)

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.algebra, self.matrix @ other.matrix)

    def __add__(self, other):
        return Superoperator(self.algebra, self.matrix + other.matrix)

    def __sub__(self, other):
        return Superoperator(self.algebra, self.matrix - other.matrix)

    def __mul__(self, c):
        return Superoperator(self.algebra, c * self.matrix)

    __rmul__ = __mul__

    @classmethod
    def identity(cls, algebra):
        return cls(algebra, np.eye(algebra.dim))

    def symmetric_form(self) -> np.ndarray:
        """``W^{1/2} M W^{-1/2}``: Hermitian iff the map is self-adjoint for ``<.,.>_omega``."""
        s = np.sqrt(self.algebra.weight_vector)
        return s[:, None] * self.matrix / s[None, :]

    def adjoint(self) -> "Superoperator":
        w = self.algebra.weight_vector
        return Superoperator(self.algebra, (self.matrix.conj().T * w) / w[:, None])

    def opnorm(self) -> float:
        return float(np.linalg.norm(self.symmetric_form(), 2))

    def _eigh(self):
        H = self.symmetric_form()
        if np.abs(H - H.conj().T).max() > 1e-8 * max(1.0, np.abs(H).max()):
            raise AlgebraError("superoperator is not self-adjoint")
        return np.linalg.eigh((H + H.conj().T) / 2)

    def min_eig(self) -> float:
        return float(self._eigh()[0].min())

    def is_psd(self, tol: float = 1e-10) -> bool:
        lam = self._eigh()[0]
        return bool(lam.min() >= -tol * max(1.0, abs(lam).max()))

    def power(self, p: float) -> "Superoperator":
        """Real power of a positive self-adjoint superoperator.

        Eigenvalues at (numerical) zero stay zero, so negative powers act as a
        pseudo-inverse on the range.
        """
        lam, V = self._eigh()
        scale = max(1.0, float(abs(lam).max()))
        if lam.min() < -1e-10 * scale:
            raise AlgebraError("power of a non-positive superoperator")
        live = lam > 1e-14 * scale
        lp = np.zeros_like(lam)
        lp[live] = lam[live] ** p
        H = (V * lp) @ V.conj().T
        s = np.sqrt(self.algebra.weight_vector)
        return Superoperator(self.algebra, H / s[:, None] * s[None, :])


# -- bimodule structures --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BimoduleStructure:
    """Target algebra ``B`` with left/right actions of ``A`` and an involution."""

    source: AlgebraDescriptor
    target: AlgebraDescriptor
    phi: StarHom
    psi: StarHom
    gamma: AntiLinearInvolution
    label: str = ""

    def __post_init__(self):
        for h in (self.phi, self.psi):
            if h.source != self.source or h.target != self.target:
                raise AlgebraError("actions must map the source algebra into the target")
        if self.gamma.algebra != self.target:
            raise AlgebraError("gamma must act on the target algebra")

    @property
    def is_canonical(self) -> bool:
        return (self.source == self.target and self.phi.spec.get("kind") == "identity"
                and self.psi.spec.get("kind") == "identity" and self.gamma.kind == "adjoint")

    def check_invariants(self, rng: np.random.Generator | None = None, n_samples: int = 8,
                         tol: float = 1e-9, check_gamma: bool = True):
        rng = rng or np.random.default_rng(0)
        self.phi.check()
        self.psi.check()
        if not check_gamma:
            return
        B = self.target
        for _ in range(n_samples):
            u = B.random_element(rng)
            x = self.source.random_element(rng)
            y = self.source.random_element(rng)
            g = self.gamma
            if not g(g(u)).allclose(u, tol * max(1.0, u.opnorm())):
                raise AlgebraError("gamma is not involutive")
            if abs(g(u).norm() - u.norm()) > tol * max(1.0, u.norm()):
                raise AlgebraError("gamma is not isometric")
            lhs = g(self.phi(x) @ u @ self.psi(y))
            rhs = self.phi(y.adjoint()) @ g(u) @ self.psi(x.adjoint())
            if not lhs.allclose(rhs, tol * max(1.0, lhs.opnorm())):
                raise AlgebraError("gamma does not intertwine the actions")
            z = 1.7 - 0.3j
            if not g(z * u).allclose(np.conj(z) * g(u), tol * max(1.0, u.opnorm())):
                raise AlgebraError("gamma is not antilinear")


def canonical_bimodule(algebra: AlgebraDescriptor) -> BimoduleStructure:
    idh = identity_hom(algebra)
    return BimoduleStructure(algebra, algebra, idh, idh, adjoint_involution(algebra), "canonical")


def twisted_bimodule(phi: StarHom, sign: float = -1.0) -> BimoduleStructure:
    """``(phi, id, sign * phi o *)`` on ``B = A`` for an involutive automorphism ``phi``.

    The default ``sign = -1`` is the one under which odd twisted commutators
    are symmetric derivations.
    """
    A = phi.source
    if phi.target != A:
        raise AlgebraError("twisting needs an automorphism")
    if not np.allclose(phi.matrix @ phi.matrix, np.eye(A.dim), atol=1e-10):
        raise AlgebraError("twisting automorphism must be involutive")
    return BimoduleStructure(A, A, phi, identity_hom(A), twisted_involution(phi, sign), "twisted")


def direct_sum_descriptor(B: AlgebraDescriptor, N: int) -> AlgebraDescriptor:
    return AlgebraDescriptor(B.block_dims * N, B.trace_weights * N, f"{B.label}^{N}" if B.label else "")


def direct_sum_bimodule(bm: BimoduleStructure, N: int) -> BimoduleStructure:
    """The ``N``-fold direct sum ``B + ... + B`` with diagonal actions."""
    if N == 1:
        return bm
    BN = direct_sum_descriptor(bm.target, N)
    phi = StarHom(bm.source, BN, np.vstack([bm.phi.matrix] * N), {"kind": "matrix"})
    psi = StarHom(bm.source, BN, np.vstack([bm.psi.matrix] * N), {"kind": "matrix"})
    G = np.kron(np.eye(N), bm.gamma.matrix)
    return BimoduleStructure(bm.source, BN, phi, psi, AntiLinearInvolution(BN, G, bm.gamma.kind),
                             f"{bm.label}^{N}")


# -- actions and joint calculus -----------------------------------------------------

def _block_kron(B: AlgebraDescriptor, left: Sequence[np.ndarray] | None, right: Sequence[np.ndarray] | None):
    M = np.zeros((B.dim, B.dim), dtype=complex)
    for l, n in enumerate(B.block_dims):
        Lb = np.eye(n) if left is None else left[l]
        Rb = np.eye(n) if right is None else right[l]
        s = B.block_slice(l)
        M[s, s] = np.kron(Lb, Rb.T)
    return M


def left_action(bm: BimoduleStructure, x: Element) -> Superoperator:
    """``u -> phi(x) u``."""
    return Superoperator(bm.target, _block_kron(bm.target, bm.phi(x).blocks, None))


def right_action(bm: BimoduleStructure, y: Element) -> Superoperator:
    """``u -> u psi(y)``."""
    return Superoperator(bm.target, _block_kron(bm.target, None, bm.psi(y).blocks))


@dataclass(frozen=True, eq=False)
class JointSpectrum:
    """Per-block eigen data of ``phi(x)`` (left) and ``psi(y)`` (right).

    ``left_mask``/``right_mask`` select eigenvectors that belong to the active
    subspace; for unrestricted calculus every mask is all ``True``.
    """

    target: AlgebraDescriptor
    lam: tuple
    U: tuple
    kap: tuple
    V: tuple
    left_mask: tuple
    right_mask: tuple

    def weights(self, g: Callable) -> list:
        out = []
        for lam, kap, lm, rm in zip(self.lam, self.kap, self.left_mask, self.right_mask):
            S, T = np.meshgrid(lam, kap, indexing="ij")
            G = np.zeros(S.shape)
            act = np.outer(lm, rm)
            if act.any():
                vals = np.asarray(g(S[act], T[act]))
                if not np.all(np.isfinite(vals)):
                    raise AlgebraError("function undefined at a spectral pair")
                G = G.astype(vals.dtype)
                G[act] = vals
            out.append(G)
        return out

    def apply_vec(self, G: Sequence[np.ndarray], v: np.ndarray) -> np.ndarray:
        """Apply the calculus with weights ``G`` to a vector or to columns of a matrix."""
        B = self.target
        cols = v if v.ndim == 2 else v[:, None]
        out = np.empty(cols.shape, dtype=complex)
        for l, n in enumerate(B.block_dims):
            s = B.block_slice(l)
            X = cols[s].T.reshape(-1, n, n)
            U, V = self.U[l], self.V[l]
            Y = U @ (G[l] * (U.conj().T @ X @ V)) @ V.conj().T
            out[s] = Y.reshape(-1, n * n).T
        return out if v.ndim == 2 else out[:, 0]

    def superoperator(self, G: Sequence[np.ndarray]) -> Superoperator:
        B = self.target
        M = np.zeros((B.dim, B.dim), dtype=complex)
        for l in range(B.n_blocks):
            U, V = self.U[l], self.V[l]
            s = B.block_slice(l)
            L = np.kron(U, V.conj())
            M[s, s] = (L * G[l].ravel()) @ L.conj().T
        return Superoperator(B, M)


def joint_spectrum(bm: BimoduleStructure, x: Element, y: Element,
                   tol: float = DEGENERACY_TOL) -> JointSpectrum:
    if not (x.is_selfadjoint() and y.is_selfadjoint()):
        raise AlgebraError("joint calculus needs self-adjoint arguments")
    X, Y = bm.phi(x), bm.psi(y)
    lam, U, kap, V, lm, rm = [], [], [], [], [], []
    for a, b in zip(X.blocks, Y.blocks):
        l1, u1 = eigh_merged(a, tol)
        l2, u2 = eigh_merged(b, tol)
        lam.append(l1), U.append(u1), kap.append(l2), V.append(u2)
        lm.append(np.ones(l1.size, bool)), rm.append(np.ones(l2.size, bool))
    return JointSpectrum(bm.target, tuple(lam), tuple(U), tuple(kap), tuple(V), tuple(lm), tuple(rm))


def joint_calculus(bm: BimoduleStructure, x: Element, y: Element, g: Callable) -> Superoperator:
    """``u -> sum_ij g(lam_i, kap_j) P_i u Q_j`` with ``phi(x) = sum lam_i P_i``, ``psi(y) = sum kap_j Q_j``.

    ``g`` must accept two equally shaped arrays.
    """
    js = joint_spectrum(bm, x, y)
    return js.superoperator(js.weights(g))


# -- restriction to a corner ------------------------------------------------------------

def _range_basis(p_block: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh((p_block + p_block.conj().T) / 2)
    return U[:, lam > 0.5]


@dataclass(frozen=True, eq=False)
class RestrictedBimodule:
    """Compression of a bimodule to ``(pAp, phi(p) B psi(p))``.

    Superoperators of the restricted structure are returned as maps on all of
    ``B`` that vanish on the orthogonal complement of ``D = phi(p) B psi(p)``.
    """

    parent: BimoduleStructure
    p: Element
    left_p: Element = field(init=False)
    right_p: Element = field(init=False)

    def __post_init__(self):
        if not is_projection(self.p):
            raise AlgebraError("restriction needs a projection")
        object.__setattr__(self, "left_p", self.parent.phi(self.p))
        object.__setattr__(self, "right_p", self.parent.psi(self.p))
        for q in (self.left_p, self.right_p):
            if not is_projection(q, 1e-9):
                raise AlgebraError("phi(p) and psi(p) must be projections")

    def compress_target(self, u: Element) -> Element:
        return self.left_p @ u @ self.right_p

    def contains(self, u: Element, tol: float = 1e-9) -> bool:
        return (self.compress_target(u) - u).norm() <= tol * max(1.0, u.norm())

    def joint_spectrum(self, x: Element, y: Element, tol: float = DEGENERACY_TOL) -> JointSpectrum:
        """Eigen data of ``phi(x)``, ``psi(y)`` restricted to the ranges of ``phi(p)``, ``psi(p)``."""
        bm = self.parent
        X, Y = bm.phi(x), bm.psi(y)
        lam, U, kap, V, lm, rm = [], [], [], [], [], []
        for a, b, pl, pr in zip(X.blocks, Y.blocks, self.left_p.blocks, self.right_p.blocks):
            for mat, proj, ev, vecs, mask in ((a, pl, lam, U, lm), (b, pr, kap, V, rm)):
                Q = _range_basis(proj)
                Qc = _range_basis(np.eye(proj.shape[0]) - proj)
                l_in, w_in = eigh_merged(Q.conj().T @ mat @ Q, tol) if Q.shape[1] else (np.zeros(0), np.zeros((0, 0)))
                full = np.hstack([Q @ w_in, Qc]) if Q.shape[1] else Qc
                ev.append(np.concatenate([l_in, np.zeros(Qc.shape[1])]))
                vecs.append(full)
                mask.append(np.concatenate([np.ones(l_in.size, bool), np.zeros(Qc.shape[1], bool)]))
        return JointSpectrum(bm.target, tuple(lam), tuple(U), tuple(kap), tuple(V), tuple(lm), tuple(rm))

    def joint_calculus(self, x: Element, y: Element, g: Callable) -> Superoperator:
        js = self.joint_spectrum(x, y)
        return js.superoperator(js.weights(g))


def restrict_bimodule(bm: BimoduleStructure, p: Element) -> RestrictedBimodule:
    return RestrictedBimodule(bm, p)
