"""Finite towers ``A_1 c A_2 c ... c A_J`` of tracial algebras with local gradients.

Each link carries a trace-compatible *-embedding ``iota: A_j -> A_{j+1}``
together with the matching embedding ``iota_B`` of the bimodule targets.
Restrictions are the trace adjoints ``pi = iota*``, so ``pi o iota = id``
and ``pi`` is the (weighted) partial trace or corner compression.

States restrict through ``pi`` followed by division by the mass
``mu(1_{A_j}) = tau_k(rho iota(1))``; for unital links this mass is 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import AlgebraError, Density, Element, trace
from .bimodule import StarHom, block_embedding
from .entropy_geometry import _pmap, entropy
from .examples import Example, ExampleSpec, build, car_stage, matrix_dynamics
from .gradient import heat_state
from .quasientropy import RepresentingFunction, logarithmic, quasi_entropy
from .transport import DiscretePath, TransportOptions, distance

MASS_TOL = 1e-10
LOCALITY_TOL = 1e-10

__all__ = [
    "Link", "ChainDescriptor", "car_tower", "corner_tower", "restrict_state", "restriction_mass",
    "restrict_element", "include_state", "restrict_path", "include_path", "distance_convergence",
    "ConvergenceTable", "heat_restriction_residual", "entropy_profile", "coarse_graining",
]


def _adjoint(N: np.ndarray, w_src: np.ndarray, w_tgt: np.ndarray) -> np.ndarray:
    return (N.conj().T * w_tgt) / w_src[:, None]


@dataclass(frozen=True, eq=False)
class Link:
    """Embedding of stage ``j`` into stage ``j + 1`` on algebras and on bimodule targets."""

    inc: StarHom
    inc_B: np.ndarray
    kind: str

    @property
    def unital(self) -> bool:
        return self.inc.is_unital

    def to_json(self) -> dict:
        if self.kind in ("tensor_m2", "corner"):
            return {"kind": self.kind}
        out = {"kind": "matrix", "data": self.inc.to_json()["data"]}
        if self.inc_B is not self.inc.matrix:
            out["target_data"] = [[[float(z.real), float(z.imag)] for z in row] for row in self.inc_B]
        return out


def _same_target(ex: Example) -> bool:
    B, A = ex.gradient.target, ex.algebra
    return B == A or (B.block_dims == A.block_dims and B.trace_weights == A.trace_weights)


def _structural_link(lo: Example, hi: Example, kind: str) -> Link:
    A, C = lo.algebra, hi.algebra
    if kind == "tensor_m2":
        if C.block_dims != tuple(2 * n for n in A.block_dims):
            raise AlgebraError(f"tensor_m2 link needs doubled blocks, got {A.block_dims} -> {C.block_dims}")
        inc = block_embedding(A, C, [[[l, 2]] for l in range(A.n_blocks)])
    elif kind == "corner":
        if A.n_blocks != 1 or C.n_blocks != 1 or C.block_dims[0] <= A.block_dims[0]:
            raise AlgebraError("corner link needs single blocks of growing size")
        pad = C.block_dims[0] - A.block_dims[0]
        inc = block_embedding(A, C, [[[0, 1], [-1, pad]]], unital=False)
    else:
        raise AlgebraError(f"unknown link kind {kind!r}")
    if not (_same_target(lo) and _same_target(hi)):
        raise AlgebraError(f"{kind} link needs B = A at both stages; give an explicit target matrix")
    return Link(inc, inc.matrix, kind)


def _matrix_link(lo: Example, hi: Example, data: dict) -> Link:
    M = np.array([[complex(a, b) for a, b in row] for row in data["data"]])
    inc = StarHom(lo.algebra, hi.algebra, M)
    inc.check(unital=False)
    if "target_data" in data:
        MB = np.array([[complex(a, b) for a, b in row] for row in data["target_data"]])
    elif _same_target(lo) and _same_target(hi):
        MB = inc.matrix
    else:
        raise AlgebraError("matrix link between stages with B != A needs target_data")
    if MB.shape != (hi.gradient.target.dim, lo.gradient.target.dim):
        raise AlgebraError(f"target embedding has shape {MB.shape}")
    return Link(inc, MB, "matrix")


@dataclass(frozen=True, eq=False)
class ChainDescriptor:
    """Ordered stages (0-based) and one :class:`Link` per consecutive pair.

    Construction verifies, per link: trace isometry, ``pi o iota = id``,
    ``grad_k iota = iota_B grad_j``, ``grad_k* iota_B = iota grad_j*`` and the
    projection intertwining ``pi_B grad_k = grad_j pi``.  The residuals are
    kept in ``locality``.
    """

    stages: tuple
    links: tuple
    locality: list = field(default_factory=list)
    tol: float = LOCALITY_TOL

    def __post_init__(self):
        stages, links = tuple(self.stages), tuple(self.links)
        if len(stages) < 1 or len(links) != len(stages) - 1:
            raise AlgebraError("need one link per consecutive pair of stages")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "links", links)
        report = []
        for j, ln in enumerate(links):
            lo, hi = stages[j], stages[j + 1]
            if ln.inc.source != lo.algebra or ln.inc.target != hi.algebra:
                raise AlgebraError(f"link {j} does not connect stages {j} and {j + 1}")
            r = _link_residuals(lo, hi, ln.inc.matrix, ln.inc_B)
            r["link"] = j
            report.append(r)
            bad = {k: v for k, v in r.items() if k != "link" and v > self.tol}
            if bad:
                raise AlgebraError(f"link {j} fails the tower axioms: {bad}")
        object.__setattr__(self, "locality", report)

    @property
    def J(self) -> int:
        return len(self.stages)

    def gradient(self, j: int):
        return self.stages[j].gradient

    def _check_pair(self, j: int, k: int):
        if not 0 <= j <= k < self.J:
            raise AlgebraError(f"need 0 <= j <= k < {self.J}, got j={j}, k={k}")

    def inclusion(self, j: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Matrices of ``iota_{kj}`` on ``A`` and on ``B``."""
        self._check_pair(j, k)
        NA = np.eye(self.stages[j].algebra.dim, dtype=complex)
        NB = np.eye(self.stages[j].gradient.target.dim, dtype=complex)
        for ln in self.links[j:k]:
            NA = ln.inc.matrix @ NA
            NB = ln.inc_B @ NB
        return NA, NB

    def restriction(self, k: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Matrices of ``pi_{jk}`` on ``A`` and on ``B`` (trace adjoints of the inclusions)."""
        NA, NB = self.inclusion(j, k)
        gj, gk = self.gradient(j), self.gradient(k)
        return (_adjoint(NA, gj.source.weight_vector, gk.source.weight_vector),
                _adjoint(NB, gj.target.weight_vector, gk.target.weight_vector))

    def unit_image(self, j: int, k: int) -> Element:
        NA, _ = self.inclusion(j, k)
        return self.stages[k].algebra.from_vec(NA @ self.stages[j].algebra.unit().vec)

    def to_json(self) -> dict:
        return {"schema": 1, "stages": [s.spec.to_json() for s in self.stages],
                "links": [ln.to_json() for ln in self.links]}

    @classmethod
    def from_json(cls, data: dict) -> "ChainDescriptor":
        try:
            stages = [build(ExampleSpec.from_json(s)) for s in data["stages"]]
            links_d = data.get("links", [{"kind": "tensor_m2"}] * (len(stages) - 1))
        except KeyError as exc:
            raise AlgebraError(f"chain is missing field {exc}") from None
        if len(links_d) != len(stages) - 1:
            raise AlgebraError("need one link per consecutive pair of stages")
        links = []
        for j, ld in enumerate(links_d):
            kind = ld.get("kind")
            if kind == "matrix":
                links.append(_matrix_link(stages[j], stages[j + 1], ld))
            else:
                links.append(_structural_link(stages[j], stages[j + 1], kind))
        return cls(stages, links)


def _link_residuals(lo: Example, hi: Example, NA: np.ndarray, NB: np.ndarray) -> dict:
    g, h = lo.gradient, hi.gradient
    wA, wC = g.source.weight_vector, h.source.weight_vector
    wB, wD = g.target.weight_vector, h.target.weight_vector
    PA, PB = _adjoint(NA, wA, wC), _adjoint(NB, wB, wD)
    scale = lambda M: max(1.0, float(np.abs(M).max()))
    return {
        "isometry": float(np.abs((NA.conj().T * wC) @ NA - np.diag(wA)).max()),
        "res_inc": float(np.abs(PA @ NA - np.eye(NA.shape[1])).max()),
        "gradient": float(np.abs(h.nabla @ NA - NB @ g.nabla).max()) / scale(g.nabla),
        "adjoint": float(np.abs(h.nabla_star @ NB - NA @ g.nabla_star).max()) / scale(g.nabla),
        "projection": float(np.abs(PB @ h.nabla - g.nabla @ PA).max()) / scale(g.nabla),
        "isometry_B": float(np.abs((NB.conj().T * wD) @ NB - np.diag(wB)).max()),
    }


# -- builders ------------------------------------------------------------------------------------

def car_tower(J: int, nu: Sequence[float] | None = None) -> ChainDescriptor:
    """Stages ``CAR_1, ..., CAR_J`` with ``x -> x (x) I_2`` between them."""
    if J < 1:
        raise AlgebraError("need at least one stage")
    nu = np.arange(1, J + 1, dtype=float) if nu is None else np.asarray(nu, float)
    stages = [car_stage(j, nu[:j]) for j in range(1, J + 1)]
    return ChainDescriptor(stages, [_structural_link(a, b, "tensor_m2") for a, b in zip(stages, stages[1:])])


def corner_tower(n0: int, J: int, nu: Sequence[float] | None = None) -> ChainDescriptor:
    """``M_{n0} c M_{n0+1} c ...`` with commutator gradients and ``x -> x (+) 0``."""
    if J < 1 or n0 < 1:
        raise AlgebraError("need n0 >= 1 and at least one stage")
    n_top = n0 + J - 1
    nu = np.arange(1, n_top + 1, dtype=float) if nu is None else np.asarray(nu, float)
    stages = [matrix_dynamics(n, nu[:n]) for n in range(n0, n_top + 1)]
    return ChainDescriptor(stages, [_structural_link(a, b, "corner") for a, b in zip(stages, stages[1:])])


# -- states and paths ----------------------------------------------------------------------------

def restrict_element(chain: ChainDescriptor, k: int, j: int, x: Element) -> Element:
    """Unnormalized restriction ``pi_{jk}(x)`` (on ``A`` or on ``B``, by membership)."""
    PA, PB = chain.restriction(k, j)
    if x.algebra == chain.stages[k].algebra:
        return chain.stages[j].algebra.from_vec(PA @ x.vec)
    if x.algebra == chain.gradient(k).target:
        return chain.gradient(j).target.from_vec(PB @ x.vec)
    raise AlgebraError(f"element does not live at stage {k}")


def restriction_mass(chain: ChainDescriptor, k: int, j: int, rho) -> float:
    """``mu(1_{A_j}) = tau_k(rho iota(1))``."""
    x = rho.element if isinstance(rho, Density) else rho
    return float(trace(x @ chain.unit_image(j, k)).real)


def restrict_state(chain: ChainDescriptor, k: int, j: int, rho: Density,
                   mass_tolerance: float = MASS_TOL) -> Density:
    m = restriction_mass(chain, k, j, rho)
    if m <= mass_tolerance:
        raise AlgebraError(f"state has mass {m:.3g} on stage {j}, below {mass_tolerance:g}")
    return Density(restrict_element(chain, k, j, rho.element) * (1.0 / m), 1e-9)


def include_state(chain: ChainDescriptor, j: int, k: int, rho: Density) -> Density:
    NA, _ = chain.inclusion(j, k)
    return Density(chain.stages[k].algebra.from_vec(NA @ rho.vec), 1e-9)


def restrict_path(chain: ChainDescriptor, k: int, j: int, path: DiscretePath,
                  mass_tolerance: float = MASS_TOL) -> DiscretePath:
    """Nodes ``pi(mu_t) / mu_0(1_{A_j})`` and fields ``pi_B(w) / mu_0(1_{A_j})``."""
    masses = [restriction_mass(chain, k, j, s) for s in path.states]
    if min(masses) <= mass_tolerance:
        raise AlgebraError(f"path loses its mass on stage {j} (min {min(masses):.3g})")
    m = masses[0]
    PA, PB = chain.restriction(k, j)
    A, B = chain.stages[j].algebra, chain.gradient(j).target
    states = [Density(A.from_vec(PA @ s.vec / m), 1e-9) for s in path.states]
    fields = [B.from_vec(PB @ w.vec / m) for w in path.fields]
    return DiscretePath(path.grid, tuple(states), tuple(fields), chain.gradient(j))


def include_path(chain: ChainDescriptor, j: int, k: int, path: DiscretePath) -> DiscretePath:
    NA, NB = chain.inclusion(j, k)
    A, B = chain.stages[k].algebra, chain.gradient(k).target
    states = [Density(A.from_vec(NA @ s.vec), 1e-9) for s in path.states]
    fields = [B.from_vec(NB @ w.vec) for w in path.fields]
    return DiscretePath(path.grid, tuple(states), tuple(fields), chain.gradient(k))


# -- studies -------------------------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    rows: list
    nondecreasing: bool
    violations: list

    def to_json(self) -> dict:
        return {"rows": self.rows, "nondecreasing": self.nondecreasing, "violations": self.violations}


def distance_convergence(chain: ChainDescriptor, rho0: Density, rho1: Density,
                         f: RepresentingFunction | None = None, theta: float = 1.0, K: int = 16,
                         opts: TransportOptions = TransportOptions(), jobs: int = 1,
                         mass_tolerance: float = MASS_TOL) -> ConvergenceTable:
    """Distances between the normalized restrictions of ``rho0, rho1`` at every stage.

    Each endpoint is normalized by its own mass.  The sequence counts as
    nondecreasing when ``W_j <= W_{j+1} + gap_j + gap_{j+1}`` at every step;
    stages where either side is infeasible are skipped in that comparison.
    """
    f = f or logarithmic()
    top = chain.J - 1

    def one(j):
        row = {"stage": j, "dim": chain.stages[j].algebra.dim,
               "mass0": restriction_mass(chain, top, j, rho0), "mass1": restriction_mass(chain, top, j, rho1)}
        try:
            a = restrict_state(chain, top, j, rho0, mass_tolerance)
            b = restrict_state(chain, top, j, rho1, mass_tolerance)
        except AlgebraError as exc:
            row.update(distance=float("nan"), gap=float("nan"), status="degenerate", note=str(exc))
            return row
        res = distance(chain.gradient(j), f, theta, a, b, K, opts)
        row.update(distance=res.distance, gap=res.gap, status=res.status)
        return row

    rows = _pmap(one, range(chain.J), jobs)
    violations = []
    for lo, hi in zip(rows, rows[1:]):
        if not (np.isfinite(lo["distance"]) and np.isfinite(hi["distance"])):
            continue
        slack = lo["gap"] + hi["gap"] + 1e-9
        if lo["distance"] > hi["distance"] + slack:
            violations.append({"stage": lo["stage"], "excess": lo["distance"] - hi["distance"] - slack})
    return ConvergenceTable(rows, not violations, violations)


def heat_restriction_residual(chain: ChainDescriptor, k: int, j: int, t: float,
                              rho: Density | None = None) -> float:
    """``||pi h_t^k - h_t^j pi||`` on matrices, or on one density when ``rho`` is given.

    With a density both sides are normalized by the common mass, which the
    heat flow conserves.
    """
    PA, _ = chain.restriction(k, j)
    hk, hj = chain.gradient(k).heat, chain.gradient(j).heat
    if rho is None:
        return float(np.abs(PA @ hk.heat_matrix(t) - hj.heat_matrix(t) @ PA).max())
    lhs = restrict_state(chain, k, j, heat_state(hk, t, rho))
    rhs = heat_state(hj, t, restrict_state(chain, k, j, rho))
    return float(np.abs(lhs.vec - rhs.vec).max())


def entropy_profile(chain: ChainDescriptor, rho: Density, tol: float = 1e-12) -> dict:
    """``Ent(mu_j)`` of the unnormalized restrictions of a top-stage density, stage by stage."""
    top = chain.J - 1
    ents = [entropy(restrict_element(chain, top, j, rho.element)) for j in range(chain.J)]
    ok = all(a <= b + tol * max(1.0, abs(b)) for a, b in zip(ents, ents[1:]))
    return {"entropies": ents, "monotone": ok}


def coarse_graining(chain: ChainDescriptor, k: int, j: int, mu, eta, w: Element,
                    f: RepresentingFunction | None = None, theta: float = 1.0) -> dict:
    """``I_j(pi mu, pi eta, pi_B w)`` against ``I_k(mu, eta, w)``."""
    f = f or logarithmic()
    mu_e = mu.element if isinstance(mu, Density) else mu
    eta_e = eta.element if isinstance(eta, Density) else eta
    lo = quasi_entropy(chain.gradient(j).bimodule, restrict_element(chain, k, j, mu_e),
                       restrict_element(chain, k, j, eta_e), restrict_element(chain, k, j, w), f, theta).value
    hi = quasi_entropy(chain.gradient(k).bimodule, mu_e, eta_e, w, f, theta).value
    return {"restricted": lo, "full": hi}
