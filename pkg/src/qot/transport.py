"""Discrete continuity equation, energy, length and the transport distance.

The distance solver works in the real coordinates of
:class:`qot.riemann.FixedStateGeometry`.  Only interior node densities are
decision variables; on every edge the vector field is eliminated through the
optimal field ``M grad S^{-1} rho_dot`` at the edge midpoint, which turns the
energy into

    E = 1/2 sum_k dt * rho_dot_k^T S(mid_k)^{-1} rho_dot_k.

This reduced energy is convex in the nodes, so the linear interpolation is
a safe start.  A short projected-gradient phase with interior flooring is
followed by limited-memory BFGS with a feasibility-aware backtracking search.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .algebra import AlgebraError, Density, Element
from .gradient import QuantumGradient, fixed_part
from .quasientropy import (EpsilonSchedule, RepresentingFunction, logarithmic, quasi_entropy)
from .riemann import FixedStateGeometry

INFEASIBLE_TOL = 1e-8


@dataclass(frozen=True)
class TransportOptions:
    max_iter: int = 5000
    rel_tol: float = 1e-9
    grad_tol: float = 1e-10
    pgd_iters: int = 25
    barrier: float = 1e-10
    floor_delta: float = 1e-3
    memory: int = 20
    refine: int = 1
    starts: int = 1
    seed: int = 0


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Densities on a time grid and one vector field per edge."""

    grid: np.ndarray
    states: tuple
    fields: tuple
    gradient: QuantumGradient
    geometry: FixedStateGeometry | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise AlgebraError("grid must be strictly increasing with at least two nodes")
        if len(self.states) != grid.size or len(self.fields) != grid.size - 1:
            raise AlgebraError("need one density per node and one field per edge")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def K(self) -> int:
        return self.grid.size - 1

    def midpoints(self) -> list:
        return [Density((a.element + b.element) * 0.5, 1e-9) for a, b in zip(self.states[:-1], self.states[1:])]

    def continuity_residuals(self) -> np.ndarray:
        g = self.gradient
        out = []
        for k, w in enumerate(self.fields):
            dt = self.grid[k + 1] - self.grid[k]
            d = (self.states[k + 1].element - self.states[k].element) * (1.0 / dt) - g.apply_adjoint(w)
            out.append(d.norm())
        return np.array(out)

    def check_invariants(self, tol: float = 1e-8) -> dict:
        from .algebra import trace
        hd = self.gradient.heat
        h0 = fixed_part(hd, self.states[0]).vec
        scale = max(1.0, max(float(np.abs(w.vec).max(initial=0.0)) for w in self.fields) if self.fields else 1.0)
        res = {
            "continuity": float(self.continuity_residuals().max()),
            "mass": max(abs(trace(s.element) - 1) for s in self.states),
            "fixed_part": max(float(np.linalg.norm(fixed_part(hd, s).vec - h0)) for s in self.states),
        }
        if res["continuity"] > tol * scale or res["mass"] > tol or res["fixed_part"] > tol:
            raise AlgebraError(f"path invariants violated: {res}")
        return res

    def node_spectra(self) -> list:
        return [s.element.eigvalsh().tolist() for s in self.states]

    def to_json(self, f: RepresentingFunction | None = None, theta: float = 1.0) -> dict:
        pieces = edge_energies(self, f or logarithmic(), theta)
        return {"grid": self.grid.tolist(), "node_spectra": self.node_spectra(),
                "edge_energy": [float(e) for e in pieces]}


@dataclass
class TransportResult:
    distance: float
    path: DiscretePath | None
    energy_history: list
    status: str
    gap: float = 0.0
    optimizer_gap: float = 0.0
    discretization_error: float | None = None
    per_K: list = field(default_factory=list)
    alternatives: list = field(default_factory=list)

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.distance))


# -- functionals on paths ------------------------------------------------------------------

def edge_energies(path: DiscretePath, f: RepresentingFunction, theta: float = 1.0,
                  schedule: EpsilonSchedule = EpsilonSchedule()) -> np.ndarray:
    """``I(mid_k, mid_k, w_k)`` per edge, ``inf`` where the quasi-entropy diverges."""
    bm = path.gradient.bimodule
    out = []
    for mid, w in zip(path.midpoints(), path.fields):
        out.append(quasi_entropy(bm, mid, mid, w, f, theta, schedule).value)
    return np.array(out)


def energy(path: DiscretePath, f: RepresentingFunction, theta: float = 1.0) -> float:
    """Midpoint rule for ``1/2 int I(mu, mu, w) dt``."""
    dt = np.diff(path.grid)
    I = edge_energies(path, f, theta)
    if not np.all(np.isfinite(I)):
        return float("inf")
    return float(0.5 * np.sum(dt * I))


def length(path: DiscretePath, f: RepresentingFunction, theta: float = 1.0) -> float:
    dt = np.diff(path.grid)
    I = edge_energies(path, f, theta)
    if not np.all(np.isfinite(I)):
        return float("inf")
    return float(np.sum(dt * np.sqrt(np.clip(I, 0, None))))


def speeds(path: DiscretePath, f: RepresentingFunction, theta: float = 1.0) -> np.ndarray:
    return np.sqrt(np.clip(edge_energies(path, f, theta), 0, None))


def speed_variation(path: DiscretePath, f: RepresentingFunction, theta: float = 1.0) -> float:
    s = speeds(path, f, theta)
    return float((s.max() - s.min()) / s.mean()) if s.mean() > 0 else 0.0


# -- optimal fields -------------------------------------------------------------------------

def geometry_for(g: QuantumGradient, rho: Density, f: RepresentingFunction | None = None,
                 theta: float = 1.0) -> FixedStateGeometry:
    return FixedStateGeometry(g, fixed_part(g.heat, rho), f, theta)


def optimal_field(g: QuantumGradient, mu: Density, x: Element, f: RepresentingFunction | None = None,
                  theta: float = 1.0, geo: FixedStateGeometry | None = None, tol: float = 1e-8) -> Element:
    """``w = M_mu grad S_mu^{-1} x``, the cheapest field with ``grad* w = x``."""
    geo = geo or geometry_for(g, mu, f, theta)
    sp = geo.spectrum(mu.vec)
    S = geo.S_matrix(sp)
    xv = x.vec
    out = np.zeros(g.target.dim, dtype=complex)
    # x = x1 + i x2 with self-adjoint parts; S acts complex-linearly
    for part, coef in ((x.hermitian_part(), 1.0), ((x - x.adjoint()) * (-0.5j), 1j)):
        c = geo.coords(part)
        if np.linalg.norm(geo.tangent_basis @ c - part.vec) > tol * max(1.0, np.linalg.norm(xv)):
            raise AlgebraError("direction is not in the image of the compressed Laplacian")
        p = np.linalg.solve(S, c)
        out += coef * geo.M_apply(sp, geo.NT @ p)
    return g.target.from_vec(out)


# -- the solver -----------------------------------------------------------------------------

class _Problem:
    """Reduced discrete energy on ``K`` edges between pinned coordinates."""

    def __init__(self, geo: FixedStateGeometry, c0: np.ndarray, c1: np.ndarray, K: int):
        self.geo, self.c0, self.c1, self.K = geo, c0, c1, K
        self.dt = 1.0 / K
        self.n_eval = 0
        self.last_Sinv = None

    def nodes(self, C: np.ndarray) -> np.ndarray:
        return np.vstack([self.c0[None], C.reshape(self.K - 1, -1), self.c1[None]])

    def __call__(self, C: np.ndarray, grad: bool = True):
        self.n_eval += 1
        geo, dt = self.geo, self.dt
        R = self.nodes(C)
        if self.K > 1 and geo.min_support_eig(geo.state_vec(R[1:-1])) <= 0:
            return np.inf, None, None
        Rd = np.diff(R, axis=0) / dt
        mids = 0.5 * (R[:-1] + R[1:])
        try:
            sp = geo.spectrum(geo.state_vec(mids))
            L = np.linalg.cholesky(geo.S_matrix(sp))
        except (AlgebraError, np.linalg.LinAlgError):
            return np.inf, None, None
        Linv = np.linalg.inv(L)
        Sinv = np.swapaxes(Linv, 1, 2) @ Linv
        self.last_Sinv = Sinv
        P = (Sinv @ Rd[:, :, None])[:, :, 0]
        E = 0.5 * dt * float(np.sum(Rd * P))
        if not grad:
            return E, None, P
        Q = geo.q_gradient(sp, P @ geo.NT.T)
        G = (P[:-1] - P[1:]) - 0.25 * dt * (Q[:-1] + Q[1:])
        return E, G.ravel(), P


def _floor(prob: _Problem, C: np.ndarray, barrier: float, delta: float) -> np.ndarray:
    geo = prob.geo
    R = C.reshape(prob.K - 1, -1)
    worst = geo.min_support_eig(geo.state_vec(R)) if R.size else 1.0
    if worst < barrier:
        return (1 - delta) * C
    return C


def _preconditioner(prob: _Problem):
    """Banded Cholesky factor of the energy Hessian with ``S`` frozen on every edge.

    Node ``j`` carries ``(S_{j-1}^{-1} + S_j^{-1}) / dt`` and neighbours couple
    through ``-S_j^{-1} / dt``: a weighted discrete Laplacian, which removes
    the ``K^2`` conditioning of the raw coordinates.
    """
    Sinv, dt = prob.last_Sinv, prob.dt
    K, d = prob.K, Sinv.shape[1]
    n, u = (K - 1) * d, 2 * d - 1
    ab = np.zeros((u + 1, n))
    a, b = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    for j in range(K - 1):
        D = (Sinv[j] + Sinv[j + 1]) / dt
        i, c = j * d + a, j * d + b
        up = i <= c
        ab[u + i[up] - c[up], c[up]] = D[up]
        if j < K - 2:
            i, c = j * d + a, (j + 1) * d + b
            ab[u + i - c, c] = -Sinv[j + 1] / dt
    try:
        return cholesky_banded(ab)
    except np.linalg.LinAlgError:
        return None


def _precondition(cb, g: np.ndarray) -> np.ndarray:
    return g.copy() if cb is None else cho_solve_banded((cb, False), g)


def _minimize(prob: _Problem, C: np.ndarray, opts: TransportOptions):
    """Projected (preconditioned) gradient warm-up, then L-BFGS.

    Returns ``(C, E, grad, history, status)``.
    """
    history = []
    E, G, _ = prob(C)
    if not np.isfinite(E):
        C = _floor(prob, C, np.inf, opts.floor_delta)
        E, G, _ = prob(C)
        if not np.isfinite(E):
            raise AlgebraError("initial path is not strictly positive")
    history.append(E)
    if C.size == 0:
        return C, E, np.zeros(0), history, "converged"
    gscale = max(1.0, np.sqrt(abs(E)))
    delta = opts.floor_delta
    cb = _preconditioner(prob)
    # warm-up: the slice is affine, so projection is the identity in coordinates
    for _ in range(opts.pgd_iters):
        if np.linalg.norm(G) <= opts.grad_tol * gscale:
            return C, E, G, history, "converged"
        d = -_precondition(cb, G)
        slope = float(G @ d)
        t = 1.0
        while t > 1e-18:
            Cn = C + t * d
            En, Gn, _ = prob(Cn)
            if np.isfinite(En) and En <= E + 1e-4 * t * slope:
                break
            t *= 0.5
        if t <= 1e-18:
            break
        Cn2 = _floor(prob, Cn, opts.barrier, delta)
        delta *= 0.5
        if Cn2 is not Cn:
            En, Gn, _ = prob(Cn2)
        rel = (E - En) / max(abs(E), 1e-300)
        C, E, G = Cn2, En, Gn
        cb = _preconditioner(prob)
        history.append(E)
        if 0 <= rel < 1e-3:
            break
    # limited-memory BFGS with the frozen-S Laplacian as initial inverse Hessian
    S_hist, Y_hist = [], []
    stall = 0
    status = "max_iter"
    for it in range(opts.max_iter):
        gn = float(np.linalg.norm(G))
        if gn <= opts.grad_tol * gscale:
            status = "converged"
            break
        q = G.copy()
        alphas = []
        for s, y in zip(reversed(S_hist), reversed(Y_hist)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        q = _precondition(cb, q)
        for (s, y), a in zip(zip(S_hist, Y_hist), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        d = -q
        slope = float(G @ d)
        if slope >= 0:
            S_hist.clear(), Y_hist.clear()
            d = -_precondition(cb, G)
            slope = float(G @ d)
        t = 1.0
        accepted = False
        while t > 1e-20:
            Cn = C + t * d
            En, Gn, _ = prob(Cn)
            if np.isfinite(En):
                if En <= E + 1e-4 * t * slope:
                    accepted = True
                    break
                # near the optimum the energy is flat to rounding: accept gradient progress
                if En <= E + 1e-14 * abs(E) and np.linalg.norm(Gn) < gn:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            status = "converged" if gn <= 1e3 * opts.grad_tol * gscale else "stalled"
            break
        s, y = Cn - C, Gn - G
        if s @ y > 1e-16 * np.linalg.norm(s) * np.linalg.norm(y):
            S_hist.append(s), Y_hist.append(y)
            if len(S_hist) > opts.memory:
                S_hist.pop(0), Y_hist.pop(0)
        rel = (E - En) / max(abs(E), 1e-300)
        C, E, G = Cn, En, Gn
        cb = _preconditioner(prob)
        history.append(E)
        stall = stall + 1 if 0 <= rel < opts.rel_tol else 0
        if stall >= 5:
            status = "converged"
            break
    return C, E, G, history, status


def _interp_coords(R: np.ndarray, K_new: int) -> np.ndarray:
    K = R.shape[0] - 1
    t_old = np.linspace(0, 1, K + 1)
    t_new = np.linspace(0, 1, K_new + 1)
    return np.array([np.interp(t_new, t_old, R[:, i]) for i in range(R.shape[1])]).T


def build_path(geo: FixedStateGeometry, R: np.ndarray, grid: np.ndarray | None = None) -> DiscretePath:
    """Path through coordinate nodes ``R`` with optimal fields on every edge."""
    K = R.shape[0] - 1
    grid = np.linspace(0, 1, K + 1) if grid is None else np.asarray(grid, float)
    states = [geo.state(r) for r in R]
    fields = []
    for k in range(K):
        dt = grid[k + 1] - grid[k]
        sp = geo.spectrum(geo.state_vec(0.5 * (R[k] + R[k + 1])))
        p = np.linalg.solve(geo.S_matrix(sp), (R[k + 1] - R[k]) / dt)
        fields.append(geo.B.from_vec(geo.M_apply(sp, geo.NT @ p)))
    return DiscretePath(grid, tuple(states), tuple(fields), geo.gradient, geo)


def _solve_K(geo, c0, c1, K, opts, C_init=None, rng=None):
    prob = _Problem(geo, c0, c1, K)
    if C_init is None:
        ts = np.linspace(0, 1, K + 1)[1:-1, None]
        C_init = ((1 - ts) * c0[None] + ts * c1[None]).ravel()
    C, E, G, hist, status = _minimize(prob, C_init, opts)
    R = prob.nodes(C)
    gradn = float(np.linalg.norm(G)) if G is not None and G.size else 0.0
    gapE = gradn * np.sqrt(max(K - 1, 1)) * geo.diameter_bound()
    W = float(np.sqrt(max(2 * E, 0.0)))
    W_lo = float(np.sqrt(max(2 * (E - gapE), 0.0)))
    return {"K": K, "R": R, "energy": E, "distance": W, "grad_norm": gradn, "optimizer_gap": W - W_lo,
            "iterations": len(hist), "status": status, "history": hist}


def distance(g: QuantumGradient, f: RepresentingFunction | None, theta: float, rho0: Density,
             rho1: Density, K: int = 16, opts: TransportOptions = TransportOptions(),
             geo: FixedStateGeometry | None = None) -> TransportResult:
    """Discrete transport distance ``sqrt(2 E)`` between two densities on ``[0, 1]``.

    With ``opts.refine = r > 1`` the solve is repeated on ``K, 2K, ...,
    2^(r-1) K`` (each warm-started from the previous one) and the last two
    values are Richardson-extrapolated assuming second-order convergence.
    The reported ``gap`` is the optimizer bound plus the size of the last
    refinement step, which over-covers the extrapolation error.
    """
    if K < 2:
        raise AlgebraError("need K >= 2 edges")
    f = f or logarithmic()
    hd = g.heat
    h0, h1 = fixed_part(hd, rho0), fixed_part(hd, rho1)
    diff = (h0.element - h1.element).norm()
    if diff > INFEASIBLE_TOL:
        return TransportResult(float("inf"), None, [], "infeasible", float("inf"))
    geo = geo or FixedStateGeometry(g, h0, f, theta)
    c0, c1 = geo.state_coords(rho0), geo.state_coords(rho1)
    if np.linalg.norm(c0 - c1) == 0:
        path = DiscretePath(np.linspace(0, 1, K + 1), tuple([rho0] * (K + 1)),
                            tuple([g.target.zero()] * K), g, geo)
        return TransportResult(0.0, path, [0.0], "converged", 0.0, 0.0, 0.0,
                               [{"K": K, "distance": 0.0, "energy": 0.0, "status": "converged"}])
    rng = np.random.default_rng(opts.seed)
    levels = []
    C_init = None
    for r in range(max(1, opts.refine)):
        Kr = K * 2 ** r
        lev = _solve_K(geo, c0, c1, Kr, opts, C_init)
        levels.append(lev)
        C_init = _interp_coords(lev["R"], 2 * Kr)[1:-1].ravel()
    last = levels[-1]
    alternatives = []
    for s in range(1, opts.starts):
        ts = np.linspace(0, 1, last["K"] + 1)[1:-1, None]
        base = (1 - ts) * c0[None] + ts * c1[None]
        noise = 0.1 * np.sin(np.pi * ts) * rng.standard_normal(base.shape)
        Cs = base + noise
        prob = _Problem(geo, c0, c1, last["K"])
        if not np.isfinite(prob(Cs.ravel(), grad=False)[0]):
            continue
        alt = _solve_K(geo, c0, c1, last["K"], opts, Cs.ravel())
        if abs(alt["distance"] - last["distance"]) > 10 * (alt["optimizer_gap"] + last["optimizer_gap"]) + 1e-9:
            alternatives.append({"start": s, "distance": alt["distance"], "status": alt["status"]})
    if len(levels) >= 2:
        Wk, W2k = levels[-2]["distance"], levels[-1]["distance"]
        value = (4 * W2k - Wk) / 3
        disc = abs(W2k - Wk)
    else:
        value, disc = last["distance"], None
    opt_gap = last["optimizer_gap"]
    status = last["status"]
    path = build_path(geo, last["R"])
    per_K = [{k: v for k, v in lev.items() if k not in ("R", "history")} for lev in levels]
    gap = opt_gap + (disc or 0.0)
    return TransportResult(float(value), path, last["history"], status, float(gap), float(opt_gap),
                           disc, per_K, alternatives)


# -- reparametrization ------------------------------------------------------------------------

def reparametrize_constant_speed(path: DiscretePath, f: RepresentingFunction | None = None,
                                 theta: float = 1.0, sweeps: int = 3) -> DiscretePath:
    """Resample a path at equal arc-length spacing on a uniform grid.

    Nodes are placed by linear interpolation of densities inside edges; the
    fields are recomputed as optimal fields.  A few sweeps remove the
    second-order speed error of a single resampling.
    """
    f = f or logarithmic()
    g = path.gradient
    geo = path.geometry or geometry_for(g, path.states[0], f, theta)
    a, b = path.grid[0], path.grid[-1]
    K = path.K
    R = np.array([geo.state_coords(s) for s in path.states])
    grid = np.linspace(a, b, K + 1)
    cur = build_path(geo, R, path.grid)
    for _ in range(max(1, sweeps)):
        sp = speeds(cur, f, theta) * np.diff(cur.grid)
        total = float(sp.sum())
        if total <= 0:
            raise AlgebraError("cannot reparametrize a path of zero length")
        cum = np.concatenate([[0.0], np.cumsum(sp)])
        target = np.linspace(0, total, K + 1)
        newR = []
        for s in target:
            k = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, K - 1))
            frac = 0.0 if sp[k] == 0 else (s - cum[k]) / sp[k]
            frac = float(np.clip(frac, 0, 1))
            newR.append((1 - frac) * R[k] + frac * R[k + 1])
        R = np.array(newR)
        R[0] = geo.state_coords(path.states[0])
        R[-1] = geo.state_coords(path.states[-1])
        cur = build_path(geo, R, grid)
    return cur


def time_warp(path: DiscretePath, warp, f: RepresentingFunction | None = None, theta: float = 1.0) -> DiscretePath:
    """Resample ``path`` at parameters ``warp(s)`` (a monotone map of ``[0, 1]``), keeping the grid."""
    geo = path.geometry or geometry_for(path.gradient, path.states[0], f, theta)
    R = np.array([geo.state_coords(s) for s in path.states])
    t_old = (path.grid - path.grid[0]) / (path.grid[-1] - path.grid[0])
    u = np.array([warp(s) for s in t_old])
    newR = np.array([np.interp(u, t_old, R[:, i]) for i in range(R.shape[1])]).T
    return build_path(geo, newR, path.grid)


def rescale_grid(path: DiscretePath, c: float, d: float) -> DiscretePath:
    """Same states over ``[c, d]``; fields scale by ``(b - a) / (d - c)``."""
    a, b = path.grid[0], path.grid[-1]
    grid = c + (path.grid - a) * (d - c) / (b - a)
    fac = (b - a) / (d - c)
    return DiscretePath(grid, path.states, tuple(w * fac for w in path.fields), path.gradient, path.geometry)
