"""Coordinates on a fixed-state slice and the metric operator ``S_mu``.

Given a fixed state ``xi`` with support ``p``, the states with fixed part
``xi`` form the affine slice ``xi + span(T)``.  ``T`` is a basis of the
self-adjoint elements of ``pAp`` orthogonal to ``ker Delta``, orthonormal for
``Re <.,.>_tau``.  Inside the slice everything is expressed in real
coordinates ``c``:

* ``S_c = Re((grad T)^H W_B M_mu (grad T))`` is the matrix of
  ``S_mu = grad* M_mu grad``, and the metric is ``g(x, x) = c^T S_c^{-1} c``;
* the derivative of ``q(mu) = <M_mu v, v>`` in ``mu`` is obtained in closed
  form from first divided differences of the mean (Daleckii-Krein);
* for the logarithmic mean the resolvent integrals ``Lambda`` and
  ``Lambda*`` are evaluated with precomputed scalar kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import roots_legendre

from .algebra import (AlgebraError, DEGENERACY_TOL, Density, Element, RANK_TOL, _cluster_mean,
                      support_projection)
from .gradient import QuantumGradient
from .quasientropy import RepresentingFunction, logarithmic

TIE_TOL = 1e-6


@lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    return roots_legendre(n)


def _range(p_block: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh((p_block + p_block.conj().T) / 2)
    return U[:, lam > 0.5]


def _real_orthonormal(cols: np.ndarray, w: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormalize complex vectors for the real inner product ``Re(x^H W y)``."""
    if cols.shape[1] == 0:
        return cols
    s = np.sqrt(w)[:, None]
    R = np.vstack([s * cols.real, s * cols.imag])
    U, sv, _ = np.linalg.svd(R, full_matrices=False)
    keep = sv > tol * max(1.0, sv.max(initial=0.0))
    U = U[:, keep]
    n = cols.shape[0]
    return (U[:n] + 1j * U[n:]) / s


def _cluster_rows(lam: np.ndarray, tol: float = DEGENERACY_TOL) -> np.ndarray:
    """Row-wise :func:`qot.algebra._cluster_mean` on a stack of sorted spectra."""
    if lam.shape[-1] < 2:
        return lam
    scale = np.maximum(1.0, np.abs(lam).max(axis=-1, keepdims=True))
    ties = np.any(np.diff(lam, axis=-1) <= tol * scale, axis=-1)
    if not ties.any():
        return lam
    out = lam.copy()
    for i in np.where(ties)[0]:
        out[i] = _cluster_mean(lam[i], tol)
    return out


def _eigh_stack(M: np.ndarray):
    lam, W = np.linalg.eigh((M + np.conj(np.swapaxes(M, -1, -2))) / 2)
    return _cluster_rows(lam), W


def _H(M):
    return np.conj(np.swapaxes(M, -1, -2))


@dataclass(frozen=True)
class _Group:
    """Blocks of equal size and equal active ranks, stacked for batched linear algebra.

    Batched arrays put the batch index outermost: row ``i * g + j`` is block
    ``j`` of batch member ``i``.
    """

    n: int
    blocks: tuple
    idx: np.ndarray      # (g, n*n) positions in the vectorized algebra
    QL: np.ndarray       # (g, n, rL)
    QR: np.ndarray       # (g, n, rR)

    @property
    def g(self) -> int:
        return len(self.blocks)

    def take(self, V: np.ndarray) -> np.ndarray:
        """``(m, dim) -> (m g, n, n)``."""
        return V[:, self.idx].reshape(-1, self.n, self.n)

    def put(self, out: np.ndarray, Y: np.ndarray):
        out[:, self.idx] = Y.reshape(out.shape[0], self.g, self.n * self.n)

    def take_cols(self, C: np.ndarray) -> np.ndarray:
        """``(m, dim, c) -> (m g, c, n, n)``."""
        m, _, c = C.shape
        return C[:, self.idx, :].transpose(0, 1, 3, 2).reshape(m * self.g, c, self.n, self.n)

    def put_cols(self, out: np.ndarray, Y: np.ndarray):
        m, _, c = out.shape
        out[:, self.idx, :] = Y.reshape(m, self.g, c, self.n * self.n).transpose(0, 1, 3, 2)

    def tiled(self, m: int):
        return np.tile(self.QL, (m, 1, 1)), np.tile(self.QR, (m, 1, 1))


def _group_blocks(alg, QL: list, QR: list) -> list:
    keys: dict = {}
    for l, n in enumerate(alg.block_dims):
        keys.setdefault((n, QL[l].shape[1], QR[l].shape[1]), []).append(l)
    groups = []
    off = alg.offsets
    for (n, rl, rr), ls in keys.items():
        idx = np.array([np.arange(off[l], off[l] + n * n) for l in ls], dtype=int)
        groups.append(_Group(n, tuple(ls), idx,
                             np.array([QL[l] for l in ls]).reshape(len(ls), n, rl),
                             np.array([QR[l] for l in ls]).reshape(len(ls), n, rr)))
    return groups


@dataclass
class Spectrum:
    """Active eigen data of ``phi(mu)`` and ``psi(mu)`` plus mean weights, per block group.

    Holds a batch of ``m`` states; ``single`` marks a batch built from one
    state vector, for which the public methods drop the batch axis.
    """

    lam: list
    U: list
    kap: list
    V: list
    G: list
    mu_vec: np.ndarray
    m: int = 1
    single: bool = True

    _kernels: list | None = None


class FixedStateGeometry:
    """Slice of states with fixed part ``xi`` and its Riemannian structure.

    Parameters
    ----------
    gradient : QuantumGradient
    xi : Density
        A fixed state, ``h(xi) = xi``.
    f : RepresentingFunction, optional
        Defaults to the logarithmic mean.
    theta : float
    """

    def __init__(self, gradient: QuantumGradient, xi: Density, f: RepresentingFunction | None = None,
                 theta: float = 1.0, rank_tol: float = RANK_TOL, quadrature: str = "log"):
        self.gradient = gradient
        self.quadrature = quadrature
        self.f = f or logarithmic()
        self.theta = float(theta)
        A, B = gradient.source, gradient.target
        self.A, self.B = A, B
        hd = gradient.heat
        if np.linalg.norm(hd.kernel_projection @ xi.vec - xi.vec) > 1e-8 * max(1.0, np.linalg.norm(xi.vec)):
            raise AlgebraError("xi is not a fixed state")
        self.xi = xi
        self.support = support_projection(xi, rank_tol)
        self._QA = [_range(b) for b in self.support.blocks]
        self._QL = [_range(b) for b in gradient.bimodule.phi(self.support).blocks]
        self._QR = [_range(b) for b in gradient.bimodule.psi(self.support).blocks]
        wA = A.weight_vector
        cols = []
        for l, Q in enumerate(self._QA):
            r = Q.shape[1]
            c = 1.0 / np.sqrt(A.trace_weights[l])
            sl = A.block_slice(l)

            def put(M):
                v = np.zeros(A.dim, dtype=complex)
                v[sl] = (Q @ M @ Q.conj().T).ravel() * c
                cols.append(v)

            for i in range(r):
                E = np.zeros((r, r), complex)
                E[i, i] = 1
                put(E)
                for j in range(i + 1, r):
                    E = np.zeros((r, r), complex)
                    E[i, j] = E[j, i] = 1 / np.sqrt(2)
                    put(E)
                    E = np.zeros((r, r), complex)
                    E[i, j], E[j, i] = 1j / np.sqrt(2), -1j / np.sqrt(2)
                    put(E)
        P = np.array(cols).T
        self.compressed_basis = P
        Kp = hd.kernel_projection
        self.tangent_basis = _real_orthonormal(P - Kp @ P, wA)
        kern = Kp @ P
        pv = self.support.vec[:, None]
        pn = float(np.vdot(pv[:, 0], wA * pv[:, 0]).real)
        kern = kern - pv @ (np.real(pv.conj().T @ (wA[:, None] * kern)) / pn)
        self.kernel_basis = _real_orthonormal(kern, wA)
        self.dim = self.tangent_basis.shape[1]
        self.NT = gradient.nabla @ self.tangent_basis
        self._phi_adj = gradient.bimodule.phi.adjoint_matrix()
        self._psi_adj = gradient.bimodule.psi.adjoint_matrix()
        self._phi = gradient.bimodule.phi.matrix
        self._psi = gradient.bimodule.psi.matrix
        self._groups = [gr for gr in _group_blocks(B, self._QL, self._QR)
                        if gr.QL.shape[2] or gr.QR.shape[2]]
        self._agroups = [gr for gr in _group_blocks(A, self._QA, self._QA) if gr.QL.shape[2]]

    # -- coordinates ----------------------------------------------------------
    def coords(self, x) -> np.ndarray:
        """Real coordinates of a tangent element (or of ``rho - xi`` for a state)."""
        v = x.vec if not isinstance(x, np.ndarray) else x
        return np.real((v * self.A.weight_vector) @ self.tangent_basis.conj())

    def state_coords(self, rho: Density) -> np.ndarray:
        return self.coords(rho.vec - self.xi.vec)

    def state_vec(self, c: np.ndarray) -> np.ndarray:
        """State vector(s) at coordinates ``c`` (shape ``(d,)`` or ``(m, d)``)."""
        return self.xi.vec + c @ self.tangent_basis.T

    def state(self, c: np.ndarray) -> Density:
        return Density(self.A.from_vec(self.state_vec(c)), 1e-9)

    def tangent(self, c: np.ndarray) -> Element:
        return self.A.from_vec(self.tangent_basis @ c)

    def in_slice(self, rho: Density, tol: float = 1e-8) -> bool:
        d = rho.vec - self.xi.vec
        return bool(np.linalg.norm(self.tangent_basis @ self.coords(d) - d) <= tol * max(1.0, np.linalg.norm(d)))

    def support_eigs(self, vec: np.ndarray) -> np.ndarray:
        """Eigenvalues on the support of ``xi``; one row per state for batched input."""
        V = np.atleast_2d(vec)
        out = []
        for gr in self._agroups:
            Q = gr.tiled(V.shape[0])[0]
            out.append(np.linalg.eigvalsh(_H(Q) @ gr.take(V) @ Q).reshape(V.shape[0], -1))
        res = np.concatenate(out, axis=1)
        return res[0] if np.ndim(vec) == 1 else res

    def min_support_eig(self, vec: np.ndarray) -> float:
        return float(self.support_eigs(vec).min())

    def diameter_bound(self) -> float:
        """Upper bound on ``||rho - sigma||_tau`` for densities in the slice."""
        return 2.0 / np.sqrt(min(self.A.trace_weights))

    # -- spectra and the mean --------------------------------------------------
    def _mean_pow(self, s, t):
        return np.clip(self.f.mean(s, t), 0, None) ** self.theta

    def _mean_pow_grad(self, s, t):
        ds, dt = self.f.mean_grad(s, t)
        if self.theta == 1:
            return ds, dt
        c = self.theta * np.clip(self.f.mean(s, t), 1e-300, None) ** (self.theta - 1)
        return c * ds, c * dt

    def spectrum(self, mu_vec: np.ndarray, floor: float = 0.0) -> Spectrum:
        """Eigen data of ``phi(mu)`` and ``psi(mu)`` on the ranges of ``phi(p)``, ``psi(p)``.

        ``mu_vec`` is one state vector or an ``(m, dim)`` stack of them.
        """
        single = np.ndim(mu_vec) == 1
        M = np.atleast_2d(mu_vec)
        m = M.shape[0]
        X = M @ self._phi.T
        Y = M @ self._psi.T
        lam, U, kap, V, G = [], [], [], [], []
        for gr in self._groups:
            QL, QR = gr.tiled(m)
            l1, w1 = _eigh_stack(_H(QL) @ gr.take(X) @ QL)
            l2, w2 = _eigh_stack(_H(QR) @ gr.take(Y) @ QR)
            if (l1.size and l1.min() <= floor) or (l2.size and l2.min() <= floor):
                raise AlgebraError("state is not strictly positive on the support of xi")
            lam.append(l1), kap.append(l2)
            U.append(QL @ w1), V.append(QR @ w2)
            G.append(self._mean_pow(l1[:, :, None], l2[:, None, :]) if l1.size and l2.size
                     else np.zeros((l1.shape[0], l1.shape[1], l2.shape[1])))
        return Spectrum(lam, U, kap, V, G, np.asarray(mu_vec), m, single)

    def _active(self, sp: Spectrum):
        for k, gr in enumerate(self._groups):
            if sp.U[k].shape[2] and sp.V[k].shape[2]:
                yield k, gr

    def M_apply(self, sp: Spectrum, cols: np.ndarray, shared: bool = False) -> np.ndarray:
        """``M_mu`` applied to vectors (columns) of the compressed target.

        For a batched spectrum ``cols`` carries a leading batch axis, unless
        ``shared`` is set, in which case every member acts on the same columns.
        """
        if sp.single:
            C = cols.reshape(1, cols.shape[0], -1)
        elif shared:
            C2 = cols.reshape(cols.shape[0], -1)
            C = np.broadcast_to(C2, (sp.m, *C2.shape))
        else:
            C = cols if cols.ndim == 3 else cols[:, :, None]
        out = np.zeros(C.shape, dtype=complex)
        for k, gr in self._active(sp):
            U, V = sp.U[k][:, None], sp.V[k][:, None]
            gr.put_cols(out, U @ (sp.G[k][:, None] * (_H(U) @ gr.take_cols(C) @ V)) @ _H(V))
        if sp.single:
            return out[0, :, 0] if cols.ndim == 1 else out[0]
        if not shared and cols.ndim == 2:
            return out[:, :, 0]
        return out

    def S_matrix(self, sp: Spectrum) -> np.ndarray:
        """Coordinate matrix of ``S_mu`` (stacked for a batched spectrum)."""
        MN = self.M_apply(sp, self.NT, shared=True)
        if sp.single:
            MN = MN[None]
        S = np.real(np.einsum("id,mie->mde", self.NT.conj() * self.B.weight_vector[:, None], MN))
        S = (S + np.swapaxes(S, 1, 2)) / 2
        return S[0] if sp.single else S

    def metric_operator(self, sp: Spectrum):
        S = self.S_matrix(sp)
        return S, np.linalg.inv(S)

    def theta_field(self, sp: Spectrum, c: np.ndarray) -> np.ndarray:
        """``Theta(mu, x) = M grad S^{-1} x`` as a vector of ``B``."""
        p = np.linalg.solve(self.S_matrix(sp), c)
        return self.M_apply(sp, self.NT @ p)

    # -- Daleckii-Krein derivative of q(mu) = <M_mu v, v> ----------------------------
    def _first_dd(self, a, ap, k, left: bool):
        """Divided difference of ``m^theta`` in its left (or right) slot."""
        a, ap, k = np.broadcast_arrays(a, ap, k)
        diff = a - ap
        close = np.abs(diff) <= TIE_TOL * np.maximum(1.0, np.maximum(np.abs(a), np.abs(ap)))
        if left:
            num = self._mean_pow(a, k) - self._mean_pow(ap, k)
            der = self._mean_pow_grad((a + ap) / 2, k)[0]
        else:
            num = self._mean_pow(k, a) - self._mean_pow(k, ap)
            der = self._mean_pow_grad(k, (a + ap) / 2)[1]
        return np.where(close, der, num / np.where(close, 1.0, diff))

    def q_gradient_element(self, sp: Spectrum, v: np.ndarray) -> np.ndarray:
        """Vectorized element ``Z`` of ``A`` with ``dq[x] = Re <Z, x>_tau`` for self-adjoint ``x``.

        ``v`` has a leading batch axis for a batched spectrum.
        """
        Vb = v[None] if sp.single else v
        ZX = np.zeros((sp.m, self.B.dim), dtype=complex)
        ZY = np.zeros((sp.m, self.B.dim), dtype=complex)
        for k, gr in self._active(sp):
            U, V = sp.U[k], sp.V[k]
            lam, kap = sp.lam[k], sp.kap[k]
            vt = _H(U) @ gr.take(Vb) @ V
            D1 = self._first_dd(lam[:, :, None, None], lam[:, None, :, None], kap[:, None, None, :], True)
            zx = np.einsum("gpb,gapb,gab->gpa", vt, D1, vt.conj())
            D2 = self._first_dd(kap[:, None, :, None], kap[:, None, None, :], lam[:, :, None, None], False)
            zy = np.einsum("gaq,gab,gaqb->gqb", vt.conj(), vt, D2)
            gr.put(ZX, U @ zx @ _H(U))
            gr.put(ZY, V @ zy @ _H(V))
        # dq[x] = <ZX^H, phi(x)>_omega + <ZY^H, psi(x)>_omega
        adj = self.B.adjoint_permutation
        Z = np.conj(ZX[:, adj]) @ self._phi_adj.T + np.conj(ZY[:, adj]) @ self._psi_adj.T
        return Z[0] if sp.single else Z

    def q_gradient(self, sp: Spectrum, v: np.ndarray) -> np.ndarray:
        """Coordinates of ``d/dmu <M_mu v, v>`` on the slice."""
        return self.coords(self.q_gradient_element(sp, v))

    # -- the logarithmic-mean resolvent integrals -------------------------------------
    @staticmethod
    def _require_single(sp: Spectrum):
        if not sp.single:
            raise AlgebraError("Lambda evaluation takes the spectrum of a single state")

    def _require_log(self):
        if not (self.f.is_log and self.theta == 1):
            raise AlgebraError("this identity requires the logarithmic mean with theta = 1")

    def kernels(self, sp: Spectrum, n0: int = 200, rtol: float = 1e-9, max_nodes: int = 12800,
                substitution: str | None = None):
        """Per-group tensors ``k(a, b, c) = int_0^inf ds / ((a+s)(b+s)(c+s))``.

        Gauss-Legendre after mapping ``(0, inf)`` to a finite interval; the
        node count doubles from ``n0`` until the relative change drops below
        ``rtol``.  ``substitution`` is ``"rational"`` (``s = r / (1 - r)`` on
        ``(0, 1)``) or ``"log"`` (``y = log s`` on a window 40 e-folds past the
        extreme eigenvalues); it defaults to ``self.quadrature``.
        """
        if sp._kernels is not None:
            return sp._kernels
        sub = substitution or self.quadrature
        if sub not in ("rational", "log"):
            raise AlgebraError(f"unknown quadrature substitution {sub!r}")
        allv = np.concatenate([np.concatenate([a.ravel(), b.ravel()]) for a, b in zip(sp.lam, sp.kap)])
        y0, y1 = np.log(allv.min()) - 40.0, np.log(allv.max()) + 40.0

        def evaluate(nodes):
            x, w = _gauss_legendre(nodes)
            if sub == "rational":
                r = 0.5 * (x + 1)
                s = r / (1 - r)
                ws = 0.5 * w / (1 - r) ** 2
            else:
                y = 0.5 * (y1 - y0) * x + 0.5 * (y1 + y0)
                s = np.exp(y)
                ws = 0.5 * (y1 - y0) * w * s
            out = []
            for lam, kap in zip(sp.lam, sp.kap):
                g, rl, rr = lam.shape[0], lam.shape[1], kap.shape[1]
                ra = 1.0 / (lam[:, :, None] + s)
                rb = 1.0 / (kap[:, :, None] + s)
                aa = (ra[:, :, None, :] * ra[:, None, :, :] * ws).reshape(g, rl * rl, nodes)
                ab = (ra[:, :, None, :] * rb[:, None, :, :] * ws).reshape(g, rl * rr, nodes)
                kphi = (aa @ np.swapaxes(rb, 1, 2)).reshape(g, rl, rl, rr)
                kpsi = (ab @ np.swapaxes(rb, 1, 2)).reshape(g, rl, rr, rr)
                out.append((kphi, kpsi))
            return out

        nodes = n0
        cur = evaluate(nodes)
        while True:
            nxt = evaluate(2 * nodes)
            worst = 0.0
            for (a1, b1), (a2, b2) in zip(cur, nxt):
                for u, v in ((a1, a2), (b1, b2)):
                    if v.size:
                        worst = max(worst, float(np.max(np.abs(u - v) / np.abs(v))))
            cur, nodes = nxt, 2 * nodes
            if worst < rtol:
                break
            if nodes >= max_nodes:
                raise AlgebraError("Lambda quadrature did not converge")
        sp._kernels = cur
        return cur

    def lambda_apply(self, sp: Spectrum, x_vec: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        """``Lambda_mu(x, u) = Lambda^phi + Lambda^psi`` as a vector of ``B``."""
        self._require_log()
        self._require_single(sp)
        ks = self.kernels(sp)
        X, Y = (self._phi @ x_vec)[None], (self._psi @ x_vec)[None]
        u_vec = u_vec[None]
        out = np.zeros((1, self.B.dim), dtype=complex)
        for k, gr in self._active(sp):
            U, V = sp.U[k], sp.V[k]
            kphi, kpsi = ks[k]
            ut = _H(U) @ gr.take(u_vec) @ V
            Xt = _H(U) @ gr.take(X) @ U
            Yt = _H(V) @ gr.take(Y) @ V
            t = (np.einsum("gapb,gap,gpb->gab", kphi, Xt, ut)
                 + np.einsum("gaqb,gaq,gqb->gab", kpsi, ut, Yt))
            gr.put(out, U @ t @ _H(V))
        return out[0]

    def lambda_star_apply(self, sp: Spectrum, u_vec: np.ndarray, v_vec: np.ndarray) -> np.ndarray:
        """``Lambda*_mu(u, v)``, the adjoint of ``x -> Lambda_mu(x, u)`` evaluated at ``v``."""
        self._require_log()
        self._require_single(sp)
        ks = self.kernels(sp)
        u_vec, v_vec = u_vec[None], v_vec[None]
        ZX = np.zeros((1, self.B.dim), dtype=complex)
        ZY = np.zeros((1, self.B.dim), dtype=complex)
        for k, gr in self._active(sp):
            U, V = sp.U[k], sp.V[k]
            kphi, kpsi = ks[k]
            ut = _H(U) @ gr.take(u_vec) @ V
            vt = _H(U) @ gr.take(v_vec) @ V
            zx = np.einsum("gapb,gab,gpb->gap", kphi, vt, ut.conj())
            zy = np.einsum("gaqb,gaq,gab->gqb", kpsi, ut.conj(), vt)
            gr.put(ZX, U @ zx @ _H(U))
            gr.put(ZY, V @ zy @ _H(V))
        return self._phi_adj @ ZX[0] + self._psi_adj @ ZY[0]

    # -- geodesic shooting ----------------------------------------------------------------
    def geodesic_rhs(self, y: np.ndarray, floor: float = 0.0) -> np.ndarray:
        d = self.dim
        c, p = y[:d], y[d:]
        sp = self.spectrum(self.state_vec(c), floor)
        S = self.S_matrix(sp)
        qg = self.q_gradient(sp, self.NT @ p)
        return np.concatenate([S @ p, -0.5 * qg])

    def shoot(self, c0: np.ndarray, velocity: np.ndarray, times: np.ndarray,
              rtol: float = 1e-12, atol: float = 1e-14):
        """Integrate the geodesic equations from ``(c0, velocity)``; returns coordinates at ``times``.

        ``times`` may contain negative values; the two directions are
        integrated separately from ``t = 0``.
        """
        times = np.asarray(times, float)
        sp = self.spectrum(self.state_vec(c0))
        p0 = np.linalg.solve(self.S_matrix(sp), velocity)
        y0 = np.concatenate([c0, p0])
        out = np.empty((times.size, self.dim))
        for sign in (1.0, -1.0):
            sel = np.where(times * sign > 0)[0]
            if sel.size == 0:
                continue
            ts = np.abs(times[sel])
            order = np.argsort(ts)

            def rhs(t, y, s=sign):
                return s * self.geodesic_rhs(y)

            sol = solve_ivp(rhs, (0.0, ts.max()), y0, method="DOP853", t_eval=ts[order],
                            rtol=rtol, atol=atol)
            if not sol.success:
                raise AlgebraError(f"geodesic integration failed: {sol.message}")
            out[sel[order]] = sol.y[:self.dim].T
        out[times == 0] = c0
        return out
