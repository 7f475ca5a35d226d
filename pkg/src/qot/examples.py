"""Ready-made gradients for the standard example classes.

* ``markov``: discrete gradient of an irreducible Markov kernel.
* ``matrix_dynamics``: commutator gradient ``i[D, .]`` on ``M_n`` with
  ``D = diag(nu)``.
* ``car_stage``: ``j`` fermionic modes, realized on ``M_{2^j}`` through the
  Jordan-Wigner matrix model, with the normalized trace and
  ``D = sum_k nu_k a_k a_k*``.
* ``principal_automorphism``: direct sum of twisted gradients
  ``i(D(n) x - phi(x) D(n))`` with ``D(n) = (a_n + a_n*) (x) T`` and ``phi`` the
  parity automorphism.
* ``perturbed``: any of the above composed with a small random non-multiplicative map,
  for exercising the consistency checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .algebra import AlgebraDescriptor, AlgebraError, Density
from .bimodule import canonical_bimodule, conjugation_hom, twisted_bimodule
from .gradient import (QuantumGradient, direct_sum, from_commutator, from_markov, from_twisted)

KINDS = {
    "markov": "K: row-stochastic matrix (list of lists); pi: optional stationary vector",
    "matrix_dynamics": "n: matrix size; nu: optional eigenvalues of D (default 1..n); weight: trace weight (default 1)",
    "car_stage": "j: number of modes; nu: optional mode energies (default 1..j)",
    "principal_automorphism": "N: number of summands; fermion_modes: default N; aux_dim: default 2",
    "perturbed": "base: another example spec; eps: size of the random mixing (default 0.05); seed",
}


@dataclass(frozen=True)
class ExampleSpec:
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, data: dict) -> "ExampleSpec":
        data = dict(data)
        kind = data.pop("kind", None)
        if kind not in KINDS:
            raise AlgebraError(f"unknown example kind {kind!r}; choose from {sorted(KINDS)}")
        return cls(kind, data)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}


@dataclass(frozen=True, eq=False)
class Example:
    spec: ExampleSpec
    algebra: AlgebraDescriptor
    gradient: QuantumGradient
    metadata: dict

    @property
    def bimodule(self):
        return self.gradient.bimodule


# -- fermionic matrix model ----------------------------------------------------------------------

_SZ = np.diag([1.0, -1.0])
_E12 = np.array([[0.0, 1.0], [0.0, 0.0]])


def annihilators(j: int) -> list:
    """Jordan-Wigner matrices ``a_k = s_z^{(k-1)} (x) E_12 (x) I`` on ``(C^2)^{(x) j}``."""
    out = []
    for k in range(j):
        factors = [_SZ] * k + [_E12] + [np.eye(2)] * (j - k - 1)
        out.append(reduce(np.kron, factors))
    return out


def check_car(a: list, tol: float = 1e-12):
    n = a[0].shape[0]
    for k, ak in enumerate(a):
        for m, am in enumerate(a):
            if np.abs(ak.conj().T @ am + am @ ak.conj().T - (k == m) * np.eye(n)).max() > tol:
                raise AlgebraError("anticommutator {a*, a} relation fails")
            if np.abs(ak @ am + am @ ak).max() > tol:
                raise AlgebraError("anticommutator {a, a} relation fails")


def car_algebra(j: int) -> AlgebraDescriptor:
    return AlgebraDescriptor((2 ** j,), (2.0 ** -j,), f"CAR{j}")


def _ladder(nu, n):
    nu = np.arange(1, n + 1, dtype=float) if nu is None else np.asarray(nu, float)
    if nu.shape != (n,):
        raise AlgebraError(f"need {n} eigenvalues, got {nu.shape}")
    return nu


# -- builders ------------------------------------------------------------------------------------

def markov(K, pi=None) -> Example:
    g = from_markov(K, pi)
    K = np.asarray(K, float)
    spec = ExampleSpec("markov", {"K": K.tolist(), **({} if pi is None else {"pi": list(pi)})})
    meta = {"expected_ricci": None, "reversible": g.provenance["reversible"], "states": K.shape[0]}
    return Example(spec, g.source, g, meta)


def matrix_dynamics(n: int, nu=None, weight: float = 1.0) -> Example:
    nu = _ladder(nu, n)
    A = AlgebraDescriptor((n,), (float(weight),), f"M{n}")
    g = from_commutator(canonical_bimodule(A), A.element([np.diag(nu)]))
    spec = ExampleSpec("matrix_dynamics", {"n": n, "nu": nu.tolist(), "weight": weight})
    return Example(spec, A, g, {"expected_ricci": 0.0, "nu": nu.tolist()})


def qubit() -> Example:
    """Commutator gradient on ``M_2`` with ``D = diag(0, 1)``."""
    return matrix_dynamics(2, [0.0, 1.0])


def car_stage(j: int, nu=None) -> Example:
    nu = _ladder(nu, j)
    a = annihilators(j)
    check_car(a)
    A = car_algebra(j)
    D = sum(v * ak @ ak.conj().T for v, ak in zip(nu, a))
    g = from_commutator(canonical_bimodule(A), A.element([D]))
    for v, ak in zip(nu, a):
        x = A.element([ak])
        if not g.apply(x).allclose(x * (1j * v), 1e-10):
            raise AlgebraError("mode gradient does not act as i nu a")
    spec = ExampleSpec("car_stage", {"j": j, "nu": nu.tolist()})
    return Example(spec, A, g, {"expected_ricci": 0.0, "nu": nu.tolist(), "modes": j})


def principal_automorphism(N: int = 1, fermion_modes: int | None = None, aux_dim: int = 2) -> Example:
    m = N if fermion_modes is None else int(fermion_modes)
    if m < N:
        raise AlgebraError("need at least N fermionic modes")
    if aux_dim < 1:
        raise AlgebraError("aux_dim must be positive")
    a = annihilators(m)
    check_car(a)
    T = np.diag([(-1.0) ** k for k in range(aux_dim)])
    parity = reduce(np.kron, [_SZ] * m)
    size = 2 ** m * aux_dim
    A = AlgebraDescriptor((size,), (2.0 ** -m,), f"CAR{m}xM{aux_dim}")
    phi = conjugation_hom(A, [np.kron(parity, np.eye(aux_dim))])
    bm = twisted_bimodule(phi)
    Ds = [np.kron(a[n] + a[n].conj().T, T) for n in range(N)]
    for n in range(N):
        for k in range(N):
            if np.abs(Ds[n] @ Ds[k] + Ds[k] @ Ds[n] - 2 * (n == k) * np.eye(size)).max() > 1e-12:
                raise AlgebraError("generators violate the Clifford relation")
    g = direct_sum([from_twisted(bm, A.element([D])) for D in Ds])
    spec = ExampleSpec("principal_automorphism", {"N": N, "fermion_modes": m, "aux_dim": aux_dim})
    return Example(spec, A, g, {"expected_ricci": 4.0, "modes": m, "aux_dim": aux_dim})


def perturbed(base: Example, eps: float = 0.05, seed: int = 0) -> Example:
    """``base`` gradient composed with ``Phi = P + Q((1 - eps) id + eps Ad_V)Q``.

    ``P`` projects onto ``ker Delta`` and ``Q = 1 - P``; ``V`` is a seeded
    random unitary.  ``Phi`` is *-preserving and fixes the kernel, so the
    result keeps the fixed parts and a self-adjoint Laplacian, but is in
    general no derivation; it exists to make the curvature checks disagree.
    """
    g = base.gradient
    A = g.source
    rng = np.random.default_rng(seed)
    Vs = []
    for n in A.block_dims:
        Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        Q, R = np.linalg.qr(Z)
        Vs.append(Q * (np.diag(R) / np.abs(np.diag(R))))
    P = g.heat.kernel_projection
    Q = np.eye(A.dim) - P
    Phi = P + Q @ ((1 - eps) * np.eye(A.dim) + eps * conjugation_hom(A, Vs).matrix) @ Q
    pg = QuantumGradient(g.bimodule, g.nabla @ Phi, {"kind": "custom", "base": g.provenance, "eps": eps, "seed": seed})
    spec = ExampleSpec("perturbed", {"base": base.spec.to_json(), "eps": eps, "seed": seed})
    return Example(spec, A, pg, {"expected_ricci": None, "perturbed": True})


def build(spec: ExampleSpec | dict) -> Example:
    """Construct an example from a spec (or its JSON dict)."""
    if isinstance(spec, dict):
        spec = ExampleSpec.from_json(spec)
    p = dict(spec.params)
    try:
        if spec.kind == "markov":
            return markov(p["K"], p.get("pi"))
        if spec.kind == "matrix_dynamics":
            return matrix_dynamics(int(p["n"]), p.get("nu"), float(p.get("weight", 1.0)))
        if spec.kind == "car_stage":
            return car_stage(int(p["j"]), p.get("nu"))
        if spec.kind == "principal_automorphism":
            return principal_automorphism(int(p.get("N", 1)), p.get("fermion_modes"), int(p.get("aux_dim", 2)))
        if spec.kind == "perturbed":
            return perturbed(build(p["base"]), float(p.get("eps", 0.05)), int(p.get("seed", 0)))
    except KeyError as exc:
        raise AlgebraError(f"example {spec.kind!r} is missing parameter {exc}") from None
    raise AlgebraError(f"unknown example kind {spec.kind!r}")


# -- state samplers --------------------------------------------------------------------------------

def random_full_rank(A: AlgebraDescriptor, rng: np.random.Generator, spread: float = 1.0) -> Density:
    """``exp(-H) / tau(exp(-H))`` for a random self-adjoint ``H``."""
    from .algebra import func_calc
    H = A.random_element(rng, hermitian=True) * spread
    top = float(H.eigvalsh().max())
    return Density.normalized(func_calc(H, lambda l: np.exp(-(l - top))))


def random_in_component(geo, rng: np.random.Generator, lo: float = 0.2, hi: float = 0.8) -> Density:
    """Random density in the slice of ``geo``, a random fraction of the way to the boundary."""
    c = rng.standard_normal(geo.dim)
    if geo.dim == 0:
        return geo.xi
    c /= np.linalg.norm(c)
    smax = boundary_distance(geo, c)
    return geo.state(rng.uniform(lo, hi) * smax * c)


def boundary_distance(geo, direction: np.ndarray, base=None, iters: int = 80) -> float:
    """Largest ``s`` with ``base + s * direction`` still positive on the support (bisection)."""
    base = np.zeros(geo.dim) if base is None else base
    lo, hi = 0.0, 1.0
    while geo.min_support_eig(geo.state_vec(base + hi * direction)) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e8:
            return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if geo.min_support_eig(geo.state_vec(base + mid * direction)) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def shipped_examples() -> dict:
    """Small instances of every class, used by the test and certification suites."""
    return {
        "markov2": markov([[0.5, 0.5], [0.5, 0.5]]),
        "markov3": markov([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]]),
        "qubit": qubit(),
        "car2": car_stage(2),
        "pa1": principal_automorphism(1),
    }
