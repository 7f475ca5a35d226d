"""Relative entropy on the fixed-state slices and the curvature checks built on it.

Everything here except :func:`entropy` and :func:`metric_operator` needs the
logarithmic mean with ``theta = 1``; other settings are rejected, because the
chain rule ``grad log mu = D_mu grad mu`` behind the identities only holds
there.

Conventions: states and tangent vectors of a slice are handled in the real
coordinates of :class:`qot.riemann.FixedStateGeometry`.  In those
coordinates the metric is ``g(c, c) = c^T S^{-1} c``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import eigh

from .algebra import AlgebraError, Density, Element, RANK_TOL, entropy_value, trace
from .gradient import QuantumGradient, fixed_part, heat_state, image_part, spectral_gap
from .riemann import FixedStateGeometry, Spectrum
from .transport import DiscretePath, TransportOptions, distance

__all__ = [
    "FixedStateGeometry", "entropy", "metric_operator", "metric_bound", "metric_form",
    "theta_field", "lambda_forms", "hessian_entropy", "hessian_matrix", "min_rayleigh",
    "hessian_fd", "euler_lagrange_residual", "fisher_information", "entropy_dissipation",
    "l2_distance_bound", "entropy_flow_bound", "bakry_emery_check", "evi_check",
    "geodesic_convexity_check", "hessian_lower_bound", "certify", "auto_lambda", "CheckReport",
    "HessianBound", "ELResidual",
]

SHOOT_STEP = np.finfo(float).eps ** (1 / 6)


def _pmap(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map, threaded when ``jobs > 1`` (LAPACK releases the GIL)."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _require_log(geo: FixedStateGeometry):
    if not (geo.f.is_log and geo.theta == 1):
        raise AlgebraError("entropy geometry needs the logarithmic mean with theta = 1 "
                           f"(got {geo.f.kind}, theta = {geo.theta})")


def _vec(mu, geo: FixedStateGeometry | None = None) -> np.ndarray:
    """State vector from a density, a state vector or (given ``geo``) slice coordinates."""
    if isinstance(mu, (Density, Element)):
        return mu.vec
    mu = np.asarray(mu)
    if geo is not None and mu.shape == (geo.dim,) and geo.dim != geo.A.dim:
        return geo.state_vec(mu)
    return mu


def _coords_of(geo: FixedStateGeometry, mu) -> np.ndarray:
    if isinstance(mu, Density):
        if not geo.in_slice(mu):
            raise AlgebraError("state does not lie in the slice of this fixed state")
        return geo.state_coords(mu)
    mu = np.asarray(mu)
    if mu.shape == (geo.A.dim,):
        return geo.coords(mu - geo.xi.vec)
    return mu.astype(float)


# -- entropy ---------------------------------------------------------------------------------

def entropy(rho: Density | Element, rank_tol: float = RANK_TOL) -> float:
    """``tau(rho log rho)`` on the support of a positive element (not necessarily normalized)."""
    x = rho.element if isinstance(rho, Density) else rho
    if not x.is_selfadjoint(1e-9) or x.eigvalsh().min() < -1e-10 * max(1.0, x.opnorm()):
        raise AlgebraError("entropy needs a positive element")
    return entropy_value(x.hermitian_part(), rank_tol)


# -- metric ----------------------------------------------------------------------------------

def metric_operator(geo: FixedStateGeometry, mu) -> tuple[np.ndarray, np.ndarray]:
    """``(S_mu, S_mu^{-1})`` as matrices in slice coordinates."""
    sp = mu if isinstance(mu, Spectrum) else geo.spectrum(_vec(mu, geo))
    return geo.metric_operator(sp)


def metric_bound(geo: FixedStateGeometry, mu) -> float:
    """Upper bound ``sigma(Delta) * sigma(mu)^theta`` for ``||S_mu^{-1}||``.

    ``sigma(Delta)`` is the inverse spectral gap of the Laplacian and
    ``sigma(mu)`` the inverse smallest eigenvalue of ``mu`` on ``supp xi``.
    """
    sg = spectral_gap(geo.gradient.heat)
    smu = 1.0 / geo.min_support_eig(_vec(mu, geo))
    return sg.value * smu ** geo.theta


def metric_form(geo: FixedStateGeometry, mu, x: np.ndarray, y: np.ndarray | None = None) -> float:
    """``g_mu(x, y)`` for coordinate vectors."""
    _, Sinv = metric_operator(geo, mu)
    y = x if y is None else y
    return float(x @ Sinv @ y)


def theta_field(geo: FixedStateGeometry, mu, x: np.ndarray) -> Element:
    """``Theta(mu, x) = M_mu grad S_mu^{-1} x``."""
    sp = mu if isinstance(mu, Spectrum) else geo.spectrum(_vec(mu, geo))
    return geo.B.from_vec(geo.theta_field(sp, x))


def lambda_forms(geo: FixedStateGeometry, mu, x: Element, u: Element, v: Element):
    """``(Lambda_mu(x, u), Lambda*_mu(u, v))`` for the logarithmic mean."""
    _require_log(geo)
    sp = mu if isinstance(mu, Spectrum) else geo.spectrum(_vec(mu, geo))
    lam = geo.lambda_apply(sp, x.vec, u.vec)
    lam_star = geo.lambda_star_apply(sp, u.vec, v.vec)
    return geo.B.from_vec(lam), geo.A.from_vec(lam_star)


# -- Hessian of the entropy ------------------------------------------------------------------

def _laplacian_coords(geo: FixedStateGeometry) -> np.ndarray:
    """Matrix of ``Delta`` on the tangent space in slice coordinates."""
    L = geo.gradient.laplacian @ geo.tangent_basis
    return np.real(geo.tangent_basis.conj().T @ (geo.A.weight_vector[:, None] * L))


def hessian_entropy(geo: FixedStateGeometry, mu, x: np.ndarray) -> float:
    """``-<1/2 Lambda*(Theta, Theta), Delta mu>_tau + g_mu(x, Delta x)`` at coordinates ``x``."""
    _require_log(geo)
    x = np.asarray(x, float)
    if not np.any(x):
        return 0.0
    muv = _vec(mu, geo)
    sp = geo.spectrum(muv)
    S, Sinv = geo.metric_operator(sp)
    th = geo.M_apply(sp, geo.NT @ (Sinv @ x))
    ls = geo.lambda_star_apply(sp, th, th)
    dmu = geo.gradient.laplacian @ muv
    first = -0.5 * float(np.real(np.vdot(ls, geo.A.weight_vector * dmu)))
    second = float(x @ Sinv @ (_laplacian_coords(geo) @ x))
    return first + second


def hessian_matrix(geo: FixedStateGeometry, mu) -> tuple[np.ndarray, np.ndarray]:
    """``(H, G)``: the Hessian quadratic form and the metric in slice coordinates."""
    _require_log(geo)
    muv = _vec(mu, geo)
    sp = geo.spectrum(muv)
    S, Sinv = geo.metric_operator(sp)
    Theta = geo.M_apply(sp, geo.NT @ Sinv)          # columns Theta(mu, e_i)
    dmu = geo.gradient.laplacian @ muv
    w = geo.B.weight_vector
    A = np.empty((geo.dim, geo.dim))
    for j in range(geo.dim):
        lj = geo.lambda_apply(sp, dmu, Theta[:, j])
        A[:, j] = np.real(Theta.conj().T @ (w * lj))
    A = (A + A.T) / 2
    SL = Sinv @ _laplacian_coords(geo)
    H = -0.5 * A + (SL + SL.T) / 2
    return H, Sinv


def min_rayleigh(geo: FixedStateGeometry, mu) -> tuple[float, np.ndarray]:
    """Smallest ``Hess_mu Ent(x) / g_mu(x, x)`` and its minimizing direction."""
    if geo.dim == 0:
        return float("inf"), np.zeros(0)
    H, G = hessian_matrix(geo, mu)
    vals, vecs = eigh(H, (G + G.T) / 2)
    return float(vals[0]), vecs[:, 0]


def hessian_fd(geo: FixedStateGeometry, mu, x: np.ndarray, step: float | None = None) -> dict:
    """Second derivative of ``Ent`` along the geodesic through ``(mu, x)`` by a 5-point stencil.

    The geodesic is shot with the Hamiltonian equations of the slice metric.
    The step defaults to ``eps^(1/6) / speed``, the balance point of
    ``O(h^4)`` truncation and ``O(eps / h^2)`` rounding, shrunk if needed so
    that the stencil stays well inside the slice.
    """
    from .examples import boundary_distance
    _require_log(geo)
    c0 = _coords_of(geo, mu)
    x = np.asarray(x, float)
    speed = np.sqrt(max(metric_form(geo, geo.state_vec(c0), x), 1e-300))
    h = SHOOT_STEP / speed if step is None else step
    nx = np.linalg.norm(x)
    room = min(boundary_distance(geo, x / nx, c0), boundary_distance(geo, -x / nx, c0)) / nx
    h = min(h, 0.25 * room)
    ts = np.array([-2, -1, 0, 1, 2], float) * h
    C = geo.shoot(c0, x, ts)
    E = np.array([entropy_value(geo.A.from_vec(geo.state_vec(c)).hermitian_part()) for c in C])
    d2 = (-E[0] + 16 * E[1] - 30 * E[2] + 16 * E[3] - E[4]) / (12 * h * h)
    return {"value": float(d2), "step": float(h), "speed": float(speed)}


# -- Euler-Lagrange residual ----------------------------------------------------------------------

@dataclass
class ELResidual:
    nodes: np.ndarray
    norms: np.ndarray
    relative: np.ndarray
    max: float
    max_relative: float

    def to_json(self) -> dict:
        return {"nodes": self.nodes.tolist(), "norms": self.norms.tolist(),
                "relative": self.relative.tolist(), "max": self.max, "max_relative": self.max_relative}


def euler_lagrange_residual(geo: FixedStateGeometry, path: DiscretePath) -> ELResidual:
    """Central-difference residual of ``d/dt S^{-1} mu_dot = -1/2 Lambda*(Theta, Theta)``.

    Velocities are central differences at the nodes, ``p_j = S(mu_j)^{-1}
    mu_dot_j``, and the residual at node ``j`` is ``(p_{j+1} - p_{j-1}) /
    (t_{j+1} - t_{j-1}) + 1/2 Lambda*(Theta_j, Theta_j)`` in coordinates.
    Needs at least four edges.  Norms are Euclidean in slice coordinates;
    ``relative`` divides by the larger of the two terms.
    """
    _require_log(geo)
    K = len(path.states) - 1
    if K < 4:
        raise AlgebraError("Euler-Lagrange residual needs at least 4 edges")
    t = path.grid
    C = np.array([geo.state_coords(s) for s in path.states])
    for c in C[1:-1]:
        if geo.min_support_eig(geo.state_vec(c)) <= 0:
            raise AlgebraError("path touches the boundary of the slice")
    P, F = {}, {}
    for j in range(1, K):
        cd = (C[j + 1] - C[j - 1]) / (t[j + 1] - t[j - 1])
        sp = geo.spectrum(geo.state_vec(C[j]))
        p = np.linalg.solve(geo.S_matrix(sp), cd)
        th = geo.M_apply(sp, geo.NT @ p)
        P[j] = p
        F[j] = 0.5 * geo.coords(geo.lambda_star_apply(sp, th, th))
    nodes, norms, rel = [], [], []
    for j in range(2, K - 1):
        dp = (P[j + 1] - P[j - 1]) / (t[j + 1] - t[j - 1])
        r = dp + F[j]
        nodes.append(j)
        norms.append(float(np.linalg.norm(r)))
        rel.append(norms[-1] / max(np.linalg.norm(dp), np.linalg.norm(F[j]), 1e-300))
    norms, rel = np.array(norms), np.array(rel)
    return ELResidual(np.array(nodes), norms, rel, float(norms.max()), float(rel.max()))


# -- entropy along the heat flow ---------------------------------------------------------------

def fisher_information(g: QuantumGradient, rho: Density, rank_tol: float = RANK_TOL) -> float:
    """``tau(Delta rho log rho)`` on the support of ``rho``."""
    from .algebra import func_calc
    x = rho.element
    cut = rank_tol * max(float(x.eigvalsh().max()), 0.0)
    logx = func_calc(x, lambda l: np.log(np.where(l > cut, l, 1.0)))
    dr = g.source.from_vec(g.laplacian @ rho.vec)
    return float(np.real(trace(dr @ logx)))


def entropy_dissipation(g: QuantumGradient, rho: Density, t: float, h: float = 1e-4) -> dict:
    """``d/dt Ent(h_t rho)`` three ways: central differences, ``-tau(Delta mu log mu)`` and ``-g(Delta mu, Delta mu)``."""
    hd = g.heat
    mu = heat_state(hd, t, rho)
    lo = max(t - h, 0.0)
    fd = (entropy(heat_state(hd, t + h, rho)) - entropy(heat_state(hd, lo, rho))) / (t + h - lo)
    ident = -fisher_information(g, mu)
    geo = FixedStateGeometry(g, fixed_part(hd, rho))
    dmu = geo.coords(g.laplacian @ mu.vec)
    metric = -metric_form(geo, mu, dmu) if geo.dim else 0.0
    return {"finite_difference": float(fd), "identity": ident, "metric": metric}


def l2_distance_bound(g: QuantumGradient, mu: Density, eta: Density, theta: float = 1.0,
                      eps_grid: Iterable[float] = tuple(np.geomspace(1e-4, 1, 41))) -> dict:
    """Best ``L^2``-type upper bound for ``W(mu, eta)`` over the sampled ``eps``.

    ``(1 - theta/2)^{-1} sigma(Delta)^{1/2} sigma(xi)^{theta/2}
    (eps^{theta/2} |h_perp mu| + eps^{-theta/2} |(1 - eps) h_perp mu - h_perp eta|)``.
    """
    hd = g.heat
    xi = fixed_part(hd, mu)
    if (xi.element - fixed_part(hd, eta).element).norm() > 1e-8:
        return {"bound": float("inf"), "eps": None}
    sg = spectral_gap(hd).value
    lam = xi.element.eigvalsh()
    lam = lam[lam > RANK_TOL * lam.max()]
    sxi = 1.0 / lam.min()
    hm, he = image_part(hd, mu), image_part(hd, eta)
    pref = sg ** 0.5 * sxi ** (theta / 2) / (1 - theta / 2)
    best, arg = float("inf"), None
    for e in eps_grid:
        b = pref * (e ** (theta / 2) * hm.norm() + e ** (-theta / 2) * (hm * (1 - e) - he).norm())
        if b < best:
            best, arg = float(b), float(e)
    return {"bound": best, "eps": arg}


def entropy_flow_bound(g: QuantumGradient, rho: Density, t: float, K: int = 16,
                       opts: TransportOptions = TransportOptions(refine=2), n_quad: int = 64) -> dict:
    """``W(rho, h_t rho)`` against three entropy-based upper bounds.

    * ``stated``: ``(t/2)(Ent rho - Ent h_t rho)``;
    * ``sqrt``: ``sqrt(t (Ent rho - Ent h_t rho))`` (Cauchy-Schwarz on the flow);
    * ``path``: ``int_0^t sqrt(I(h_s rho)) ds``, the length of the heat-flow curve,
      by Gauss-Legendre with ``n_quad`` nodes.
    """
    hd = g.heat
    mu_t = heat_state(hd, t, rho)
    dE = entropy(rho) - entropy(mu_t)
    res = distance(g, None, 1.0, rho, mu_t, K, opts)
    x, w = np.polynomial.legendre.leggauss(n_quad)
    s = 0.5 * t * (x + 1)
    fish = np.array([max(fisher_information(g, heat_state(hd, si, rho)), 0.0) for si in s])
    path = float(0.5 * t * np.sum(w * np.sqrt(fish)))
    return {"t": t, "distance": res.distance, "gap": res.gap, "status": res.status,
            "delta_entropy": dE, "stated": 0.5 * t * dE, "sqrt": float(np.sqrt(max(t * dE, 0.0))),
            "path": path}


# -- certification ------------------------------------------------------------------------------

@dataclass
class CheckReport:
    name: str
    lam: float
    passed: bool
    worst_margin: float
    tolerance: float
    details: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _slice_samples(geo: FixedStateGeometry, rng: np.random.Generator, n_random: int,
                   corner_eps: Sequence[float] = (), n_dirs: int = 0, spread: float = 1.0) -> list:
    """``(label, coords)``: ``xi`` itself, pulled-in ``exp(-H)`` states and near-boundary probes."""
    from .examples import boundary_distance, random_full_rank
    out = [("xi", np.zeros(geo.dim))]
    if geo.dim == 0:
        return out
    for k in range(n_random):
        rho = random_full_rank(geo.A, rng, spread)
        c = geo.coords(geo.compressed_basis @ np.real(geo.compressed_basis.conj().T
                                                      @ (geo.A.weight_vector * rho.vec)) - geo.xi.vec)
        s = 1.0
        while geo.min_support_eig(geo.state_vec(s * c)) <= 1e-12 and s > 1e-6:
            s *= 0.5
        out.append((f"random{k}", s * c))
    for k in range(n_dirs):
        d = rng.standard_normal(geo.dim)
        d /= np.linalg.norm(d)
        smax = boundary_distance(geo, d)
        for e in corner_eps:
            out.append((f"corner{k}:{e:g}", (1 - e) * smax * d))
    return out


def _fixed_states(g: QuantumGradient, rng: np.random.Generator, n_fixed: int) -> list:
    from .examples import random_full_rank
    hd = g.heat
    out = [fixed_part(hd, Density.uniform(g.source))]
    for _ in range(n_fixed):
        xi = fixed_part(hd, random_full_rank(g.source, rng))
        if all((xi.element - o.element).norm() > 1e-8 for o in out):
            out.append(xi)
    return out


def bakry_emery_check(g: QuantumGradient, lam: float, samples: int | Sequence[Density] = 16,
                      t_grid: Sequence[float] = (0.05, 0.1, 0.25, 0.5, 1.0), seed: int = 0,
                      tol: float = 1e-8, jobs: int = 1, spread: float = 1.0) -> CheckReport:
    """``||M_mu^{1/2} grad h_t u||^2 <= e^{-2 lam t} ||M_{h_t mu}^{1/2} grad u||^2`` on sampled ``mu``.

    For each density and ``t`` the worst ratio of the two quadratic forms over
    self-adjoint ``u`` in the tangent space of ``h(mu)`` is a generalized
    eigenvalue ``r``; the margin is ``e^{-2 lam t} - r``.  The tracial state is
    always among the samples.  A heat flow that leaves the positive cone
    yields a row with margin ``-inf``.
    """
    from .examples import random_full_rank
    from .quasientropy import logarithmic
    rng = np.random.default_rng(seed)
    if isinstance(samples, int):
        dens = [Density.uniform(g.source)] + [random_full_rank(g.source, rng, spread) for _ in range(samples)]
    else:
        dens = list(samples)
    hd = g.heat
    heats = {t: hd.heat_matrix(t) for t in t_grid}

    def one(args):
        k, mu = args
        geo = FixedStateGeometry(g, fixed_part(hd, mu), logarithmic(), 1.0)
        if geo.dim == 0:
            return []
        sp = geo.spectrum(mu.vec)
        rows = []
        for t in t_grid:
            NH = g.nabla @ (heats[t] @ geo.tangent_basis)
            Aq = np.real(NH.conj().T @ (geo.B.weight_vector[:, None] * geo.M_apply(sp, NH)))
            hv = heats[t] @ mu.vec
            if geo.min_support_eig(hv) <= 0:
                rows.append({"sample": k, "t": t, "ratio": float("inf"), "margin": float("-inf"),
                             "status": "positivity_lost"})
                continue
            Bq = geo.S_matrix(geo.spectrum(hv))
            r = float(eigh((Aq + Aq.T) / 2, Bq, eigvals_only=True)[-1])
            rows.append({"sample": k, "t": t, "ratio": r, "margin": float(np.exp(-2 * lam * t) - r)})
        return rows

    details = [row for rows in _pmap(one, list(enumerate(dens)), jobs) for row in rows]
    worst = min((d["margin"] for d in details), default=float("inf"))
    return CheckReport("bakry_emery", float(lam), bool(worst >= -tol), float(worst), tol, details)


def _w2_slack(W: float, gap: float) -> float:
    return 2 * W * gap + gap * gap


def evi_check(g: QuantumGradient, lam: float, pairs: Sequence[tuple[Density, Density]],
              t_grid: Sequence[float] = (0.1, 0.5, 1.0), K: int = 16,
              opts: TransportOptions = TransportOptions(refine=2), base_tol: float = 1e-6,
              jobs: int = 1) -> CheckReport:
    """Integral form of ``EVI_lam`` for ``s < t`` in ``{0} + t_grid``.

    ``e^{lam (t-s)}/2 W(h_t mu, eta)^2 - 1/2 W(h_s mu, eta)^2 <=
    (int_0^{t-s} e^{lam r} dr) (Ent eta - Ent h_t mu)``.  The tolerance of each
    inequality is the first-order effect of the two distance gaps on the
    squared distances plus ``base_tol``.  Infeasible pairs are reported and
    skipped; pairs whose heat flow loses positivity fail.
    """
    hd = g.heat
    times = [0.0] + sorted(float(t) for t in t_grid if t > 0)

    def one(args):
        k, (mu, eta) = args
        try:
            mus = {t: heat_state(hd, t, mu) if t > 0 else mu for t in times}
        except AlgebraError:
            return [{"pair": k, "status": "positivity_lost", "margin": float("-inf"), "tolerance": 0.0}]
        Ws = {}
        for t in times:
            r = distance(g, None, 1.0, mus[t], eta, K, opts)
            if not r.finite:
                return [{"pair": k, "status": "infeasible"}]
            Ws[t] = r
        Eeta = entropy(eta)
        rows = []
        for i, s in enumerate(times):
            for t in times[i + 1:]:
                d = t - s
                integ = d if lam == 0 else np.expm1(lam * d) / lam
                lhs = 0.5 * np.exp(lam * d) * Ws[t].distance ** 2 - 0.5 * Ws[s].distance ** 2
                rhs = integ * (Eeta - entropy(mus[t]))
                tol = (0.5 * np.exp(lam * d) * _w2_slack(Ws[t].distance, Ws[t].gap)
                       + 0.5 * _w2_slack(Ws[s].distance, Ws[s].gap) + base_tol)
                rows.append({"pair": k, "s": s, "t": t, "lhs": float(lhs), "rhs": float(rhs),
                             "margin": float(rhs - lhs), "tolerance": float(tol)})
        return rows

    details = [row for rows in _pmap(one, list(enumerate(pairs)), jobs) for row in rows]
    checked = [d for d in details if "margin" in d]
    worst = min((d["margin"] + d["tolerance"] for d in checked), default=float("inf"))
    return CheckReport("evi", float(lam), bool(worst >= 0), float(worst), base_tol, details)


def geodesic_convexity_check(g: QuantumGradient, lam: float, pairs: Sequence[tuple[Density, Density]],
                             K: int = 16, opts: TransportOptions = TransportOptions(refine=2),
                             base_tol: float = 1e-6, jobs: int = 1) -> CheckReport:
    """``Ent(mu_t) <= (1-t) Ent mu0 + t Ent mu1 - lam/2 t(1-t) W^2`` at the nodes of computed geodesics.

    The tolerance per node is ``gap * sqrt(I)`` (the entropy can move by at
    most the metric slope times the node error, bounded by the distance gap)
    plus the ``W^2`` slack scaled by ``|lam|/2 t(1-t)``, plus ``base_tol``.
    """
    def one(args):
        k, (mu0, mu1) = args
        r = distance(g, None, 1.0, mu0, mu1, K, opts)
        if not r.finite:
            return [{"pair": k, "status": "infeasible"}]
        if r.path is None:
            return []
        E0, E1 = entropy(mu0), entropy(mu1)
        W, gap = r.distance, r.gap
        fish = max(max(fisher_information(g, s), 0.0) for s in r.path.states)
        rows = []
        for t, st in zip(r.path.grid[1:-1], r.path.states[1:-1]):
            rhs = (1 - t) * E0 + t * E1 - 0.5 * lam * t * (1 - t) * W ** 2
            lhs = entropy(st)
            tol = gap * np.sqrt(fish) + 0.5 * abs(lam) * t * (1 - t) * _w2_slack(W, gap) + base_tol
            rows.append({"pair": k, "t": float(t), "lhs": float(lhs), "rhs": float(rhs),
                         "margin": float(rhs - lhs), "tolerance": float(tol)})
        return rows

    details = [row for rows in _pmap(one, list(enumerate(pairs)), jobs) for row in rows]
    checked = [d for d in details if "margin" in d]
    worst = min((d["margin"] + d["tolerance"] for d in checked), default=float("inf"))
    return CheckReport("convexity", float(lam), bool(worst >= 0), float(worst), base_tol, details)


@dataclass
class HessianBound:
    lam: float
    argmin: dict
    samples: list

    def to_json(self) -> dict:
        return {"lambda_est": self.lam, "argmin": self.argmin, "samples": self.samples}


def hessian_lower_bound(target: QuantumGradient | FixedStateGeometry, samples: int = 64, seed: int = 0,
                        n_fixed: int = 2, corner_eps: Sequence[float] = (1e-1, 1e-2, 1e-3),
                        n_dirs: int = 4, spread: float = 1.0, jobs: int = 1) -> HessianBound:
    """Empirical infimum of ``Hess_mu Ent(x) / g_mu(x, x)``.

    The minimum over ``x`` is a generalized eigenvalue at each sampled
    ``mu``.  Fixed states are the tracial one plus ``n_fixed`` random ones
    (or just the slice of a given geometry); on each slice the ``mu`` are
    ``xi`` itself, ``samples`` pulled-in random states and ``n_dirs``
    directions probed at ``(1 - eps)`` of the way to the boundary.  This is a
    sampled estimate, not a proof.
    """
    rng = np.random.default_rng(seed)
    if isinstance(target, FixedStateGeometry):
        geos = [target]
    else:
        geos = [FixedStateGeometry(target, xi) for xi in _fixed_states(target, rng, n_fixed)]
    for geo in geos:
        _require_log(geo)
    per = max(1, samples // len(geos))
    tasks = []
    for i, geo in enumerate(geos):
        for label, c in _slice_samples(geo, rng, per, corner_eps, n_dirs, spread):
            tasks.append((i, label, c))

    def one(task):
        i, label, c = task
        geo = geos[i]
        val, _ = min_rayleigh(geo, geo.state_vec(c))
        return {"slice": i, "sample": label, "lambda": val,
                "min_eig": float(geo.min_support_eig(geo.state_vec(c)))}

    rows = [r for r in _pmap(one, tasks, jobs) if np.isfinite(r["lambda"])]
    if not rows:
        return HessianBound(float("inf"), {}, [])
    best = min(rows, key=lambda r: r["lambda"])
    return HessianBound(float(best["lambda"]), best, rows)


def certify(g: QuantumGradient, lam: float, n_samples: int = 16, n_pairs: int = 3, seed: int = 0,
            K: int = 12, t_grid: Sequence[float] = (0.1, 0.5), jobs: int = 1, example: str = "") -> dict:
    """Run all four curvature checks at ``lam`` and collect a JSON report."""
    from .examples import random_full_rank
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        mu = random_full_rank(g.source, rng, 0.5)
        geo = FixedStateGeometry(g, fixed_part(g.heat, mu))
        c = geo.state_coords(random_full_rank(g.source, rng, 0.5))
        eta = geo.state(0.5 * c) if geo.dim else mu
        pairs.append((mu, eta))
    opts = TransportOptions(refine=2)
    hb = hessian_lower_bound(g, n_samples, seed, jobs=jobs)
    be = bakry_emery_check(g, lam, n_samples, seed=seed, jobs=jobs)
    evi = evi_check(g, lam, pairs, t_grid, K, opts, jobs=jobs)
    cvx = geodesic_convexity_check(g, lam, pairs, K, opts, jobs=jobs)
    checks = {"be": be.passed, "evi": evi.passed, "convexity": cvx.passed,
              "hessian": bool(hb.lam >= lam - 1e-6)}
    return {
        "example": example,
        "lambda_tested": float(lam),
        "checks": checks,
        "margins": {"be": be.worst_margin, "evi": evi.worst_margin, "convexity": cvx.worst_margin,
                    "hessian": hb.lam - lam},
        "hessian_lambda_est": hb.lam,
        "samples": {"be": len(be.details), "evi": len(evi.details), "convexity": len(cvx.details),
                    "hessian": len(hb.samples)},
        "consistent": len(set(checks.values())) == 1,
        "verdict": "pass" if all(checks.values()) else ("fail" if not any(checks.values()) else "inconsistent"),
    }


def auto_lambda(g: QuantumGradient, samples: int = 16, seed: int = 0, jobs: int = 1,
                width: float = 0.5, iters: int = 10) -> dict:
    """Curvature estimate: the Hessian bound, then bisection of the Bakry-Emery frontier around it.

    Returns both numbers and ``lam = min`` of the two, the value to certify.
    When no tested value passes the Bakry-Emery check the frontier is
    ``None`` and ``lam`` falls back to the Hessian estimate.
    """
    hb = hessian_lower_bound(g, max(samples, 16), seed, jobs=jobs)
    if not np.isfinite(hb.lam):
        return {"hessian": hb.lam, "be_frontier": None, "lam": float("nan"), "bracket": None}
    passes = lambda l: bakry_emery_check(g, l, samples, seed=seed, jobs=jobs).passed
    lo, hi = hb.lam - width, hb.lam + width
    step = width
    for _ in range(8):
        if passes(lo):
            break
        hi, lo, step = lo, lo - 2 * step, 2 * step
    else:
        return {"hessian": hb.lam, "be_frontier": None, "lam": hb.lam, "bracket": None}
    for _ in range(8):
        if not passes(hi):
            break
        lo, hi, step = hi, hi + 2 * step, 2 * step
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if passes(mid) else (lo, mid)
    return {"hessian": hb.lam, "be_frontier": lo, "lam": float(min(hb.lam, lo)), "bracket": [lo, hi]}
