"""Operator means, noncommutative division and quasi-entropies.

A representing function ``f`` induces the two-variable mean
``m_f(s, t) = f(s / t) t``.  Feeding ``m_f`` (raised to ``theta``) into the
joint calculus of :mod:`qot.bimodule` gives the multiplication operator
``M``, and its inverse is the division operator ``D``.  The quasi-entropy
``I(mu, eta, w) = <D w, w>`` is the noncommutative analogue of ``|w|^2 / rho``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .algebra import RANK_TOL, AlgebraError, Density, Element
from .bimodule import (BimoduleStructure, JointSpectrum, Superoperator, joint_calculus,
                       joint_spectrum, restrict_bimodule)

STRICT_TOL = 1e-12
LIMIT_TOL = 1e-12


def _pair(s, t):
    s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    return s, t


# -- logarithmic mean -------------------------------------------------------------------

_SMALL_U = 1e-4


def _L(u):
    """``u / log1p(u)`` for ``u >= 0`` with the removable singularity at 0."""
    u = np.asarray(u, float)
    out = np.empty_like(u)
    small = u < _SMALL_U
    us = u[small]
    out[small] = 1 + us / 2 - us ** 2 / 12 + us ** 3 / 24 - 19 * us ** 4 / 720
    ub = u[~small]
    out[~small] = ub / np.log1p(ub)
    return out


def _dL(u):
    u = np.asarray(u, float)
    out = np.empty_like(u)
    small = u < _SMALL_U
    us = u[small]
    out[small] = 0.5 - us / 6 + us ** 2 / 8 - 19 * us ** 3 / 180
    ub = u[~small]
    lg = np.log1p(ub)
    out[~small] = 1 / lg - ub / ((1 + ub) * lg ** 2)
    return out


def _log_mean(s, t):
    s, t = _pair(s, t)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    out = np.zeros(s.shape)
    pos = lo > 0
    out[pos] = lo[pos] * _L(hi[pos] / lo[pos] - 1)
    return out


def _log_mean_grad(s, t):
    s, t = _pair(s, t)
    ds, dt = np.zeros(s.shape), np.zeros(s.shape)
    a = s >= t
    u = s[a] / t[a] - 1
    ds[a] = _dL(u)
    dt[a] = _L(u) - (1 + u) * _dL(u)
    b = ~a
    v = t[b] / s[b] - 1
    dt[b] = _dL(v)
    ds[b] = _L(v) - (1 + v) * _dL(v)
    return ds, dt


# -- other means ----------------------------------------------------------------------------

def _arith(s, t):
    s, t = _pair(s, t)
    return (s + t) / 2


def _arith_grad(s, t):
    s, t = _pair(s, t)
    return np.full(s.shape, 0.5), np.full(s.shape, 0.5)


def _geo(s, t):
    s, t = _pair(s, t)
    return np.sqrt(np.clip(s, 0, None) * np.clip(t, 0, None))


def _geo_grad(s, t):
    s, t = _pair(s, t)
    return 0.5 * np.sqrt(t / s), 0.5 * np.sqrt(s / t)


def _harm(s, t):
    s, t = _pair(s, t)
    den = s + t
    return np.where(den > 0, 2 * s * t / np.where(den > 0, den, 1), 0.0)


def _harm_grad(s, t):
    s, t = _pair(s, t)
    den = (s + t) ** 2
    return 2 * t ** 2 / den, 2 * s ** 2 / den


def _power_mean(alpha):
    if alpha > 0:
        def m(s, t):
            s, t = _pair(s, t)
            return ((s ** alpha + t ** alpha) / 2) ** (1 / alpha)
    else:
        def m(s, t):
            s, t = _pair(s, t)
            out = np.zeros(s.shape)
            pos = (s > 0) & (t > 0)
            out[pos] = ((s[pos] ** alpha + t[pos] ** alpha) / 2) ** (1 / alpha)
            return out

    def grad(s, t):
        s, t = _pair(s, t)
        base = (s ** alpha + t ** alpha) / 2
        c = base ** (1 / alpha - 1) / 2
        return c * s ** (alpha - 1), c * t ** (alpha - 1)

    return m, grad


@dataclass(frozen=True)
class RepresentingFunction:
    """Operator monotone ``f`` with ``f(1) = 1`` and its induced mean.

    ``mean`` is vectorized over two equally shaped arrays and already carries
    the continuous extension to ``[0, inf)^2``.  ``mean_grad`` returns the two
    partial derivatives on the open quadrant.
    """

    kind: str
    symmetric: bool
    f: Callable = field(compare=False)
    mean: Callable = field(compare=False)
    mean_grad: Callable = field(compare=False)
    param: float | None = None

    @property
    def is_log(self) -> bool:
        return self.kind == "logarithmic"

    def weights(self, js: JointSpectrum, theta: float, inverse: bool = False) -> list:
        """``m^theta`` (or ``m^-theta``) on every active spectral pair."""
        _check_theta(theta)
        if inverse:
            def g(s, t):
                m = self.mean(s, t)
                with np.errstate(divide="ignore"):
                    out = np.where(m > 0, m, np.nan) ** (-theta)
                return out
        else:
            def g(s, t):
                return np.clip(self.mean(s, t), 0, None) ** theta
        return js.weights(g)

    def validate(self, grid: Sequence[float] | None = None, tol: float = 1e-10):
        """Sampled checks of normalization, monotonicity, symmetry and mean bounds."""
        if abs(float(self.f(1.0)) - 1) > tol:
            raise AlgebraError(f"representing function has f(1) = {float(self.f(1.0))}")
        grid = np.asarray(grid if grid is not None else np.geomspace(1e-3, 1e3, 25))
        S, T = np.meshgrid(grid, grid, indexing="ij")
        M = self.mean(S, T)
        if np.any(np.diff(M, axis=0) < -tol * M[1:]) or np.any(np.diff(M, axis=1) < -tol * M[:, 1:]):
            raise AlgebraError("induced mean is not monotone")
        if self.symmetric:
            fs = np.array([float(self.f(s)) for s in grid])
            fi = np.array([float(self.f(1 / s)) for s in grid]) * grid
            if np.any(np.abs(fs - fi) > 1e-8 * np.maximum(1, fs)):
                raise AlgebraError("symmetric flag set but f(s) != s f(1/s)")
            if np.any(M < _harm(S, T) * (1 - 1e-9)) or np.any(M > _arith(S, T) * (1 + 1e-9)):
                raise AlgebraError("symmetric mean must lie between harmonic and arithmetic")


def logarithmic() -> RepresentingFunction:
    return RepresentingFunction("logarithmic", True,
                                lambda s: float(_log_mean(s, 1.0)), _log_mean, _log_mean_grad)


def arithmetic() -> RepresentingFunction:
    return RepresentingFunction("arithmetic", True, lambda s: (s + 1) / 2, _arith, _arith_grad)


def geometric() -> RepresentingFunction:
    return RepresentingFunction("geometric", True, lambda s: np.sqrt(s), _geo, _geo_grad)


def harmonic() -> RepresentingFunction:
    return RepresentingFunction("harmonic", True, lambda s: 2 * s / (s + 1), _harm, _harm_grad)


def power_mean(alpha: float) -> RepresentingFunction:
    """``((s^a + t^a) / 2)^(1/a)`` for ``a`` in ``[-1, 1]``; ``a = 0`` is the geometric mean."""
    alpha = float(alpha)
    if not -1 <= alpha <= 1:
        raise AlgebraError("power mean exponent must lie in [-1, 1] for operator monotonicity")
    if alpha == 0:
        g = geometric()
        return RepresentingFunction("power_mean", True, g.f, g.mean, g.mean_grad, 0.0)
    m, grad = _power_mean(alpha)
    return RepresentingFunction("power_mean", True, lambda s: float(m(s, 1.0)), m, grad, alpha)


def custom(table_s: Sequence[float], table_f: Sequence[float], symmetric: bool = False) -> RepresentingFunction:
    """Mean from a sampled representing function (approximate).

    ``f`` is interpolated monotonically in ``log s``; beyond the table it is
    continued as a constant on the left and linearly on the right.
    """
    s = np.asarray(table_s, float)
    fv = np.asarray(table_f, float)
    if s.ndim != 1 or s.size < 3 or np.any(s <= 0) or np.any(np.diff(s) <= 0):
        raise AlgebraError("custom table needs at least three increasing positive abscissae")
    if np.any(np.diff(fv) < 0) or np.any(fv <= 0):
        raise AlgebraError("custom representing function must be positive and nondecreasing")
    interp = PchipInterpolator(np.log(s), fv, extrapolate=False)
    dinterp = interp.derivative()
    r_lo, r_hi, f_lo, f_hi = s[0], s[-1], fv[0], fv[-1]

    def fn(r):
        r = np.asarray(r, float)
        out = np.empty(r.shape)
        lo, hi = r <= r_lo, r >= r_hi
        mid = ~(lo | hi)
        out[lo] = f_lo
        out[hi] = f_hi * r[hi] / r_hi
        out[mid] = interp(np.log(r[mid]))
        return out

    def dfn(r):
        r = np.asarray(r, float)
        out = np.zeros(r.shape)
        hi = r >= r_hi
        mid = (r > r_lo) & ~hi
        out[hi] = f_hi / r_hi
        out[mid] = dinterp(np.log(r[mid])) / r[mid]
        return out

    def mean(a, b):
        a, b = _pair(a, b)
        out = np.zeros(a.shape)
        pos = (a > 0) & (b > 0)
        out[pos] = fn(a[pos] / b[pos]) * b[pos]
        left = (a == 0) & (b > 0)
        out[left] = f_lo * b[left]
        right = (a > 0) & (b == 0)
        out[right] = a[right] * f_hi / r_hi
        return out

    def grad(a, b):
        a, b = _pair(a, b)
        r = a / b
        d = dfn(r)
        return d, fn(r) - r * d

    rf = RepresentingFunction("custom", symmetric, lambda x: float(fn(np.array([x]))[0]), mean, grad)
    if abs(rf.f(1.0) - 1) > 1e-6:
        raise AlgebraError("custom representing function must satisfy f(1) = 1")
    return rf


_BY_NAME = {"logarithmic": logarithmic, "log": logarithmic, "arithmetic": arithmetic,
            "geometric": geometric, "harmonic": harmonic}


def by_name(name: str, **params) -> RepresentingFunction:
    """Look up a representing function from its CLI name."""
    if name in _BY_NAME:
        return _BY_NAME[name]()
    if name == "power_mean":
        return power_mean(params.get("alpha", 0.5))
    if name == "custom":
        return custom(params["s"], params["f"], bool(params.get("symmetric", False)))
    raise AlgebraError(f"unknown representing function {name!r}")


def _check_theta(theta: float):
    if not 0 < theta <= 1:
        raise AlgebraError(f"theta must lie in (0, 1], got {theta}")


# -- operators ------------------------------------------------------------------------------------

def _check_positive(x: Element, strict: bool, tol: float = STRICT_TOL):
    if not x.is_selfadjoint():
        raise AlgebraError("argument must be self-adjoint")
    lam = x.eigvalsh()
    scale = max(1.0, float(np.abs(lam).max()))
    if strict and lam.min() <= tol * scale:
        raise AlgebraError("argument must be strictly positive")
    if lam.min() < -1e-10 * scale:
        raise AlgebraError("argument must be positive semidefinite")


def _as_element(x) -> Element:
    return x.element if isinstance(x, Density) else x


def mult_operator(bm: BimoduleStructure, x, y, f: RepresentingFunction, theta: float = 1.0) -> Superoperator:
    """``M = (L_x (x) R_y)(m_f)^theta``; the power is taken on the superoperator itself."""
    _check_theta(theta)
    x, y = _as_element(x), _as_element(y)
    _check_positive(x, False)
    _check_positive(y, False)
    M = joint_calculus(bm, x, y, lambda s, t: np.clip(f.mean(s, t), 0, None))
    return M if theta == 1 else M.power(theta)


def div_operator(bm: BimoduleStructure, x, y, f: RepresentingFunction, theta: float = 1.0) -> Superoperator:
    """Inverse of :func:`mult_operator` for strictly positive arguments."""
    _check_theta(theta)
    x, y = _as_element(x), _as_element(y)
    _check_positive(x, True)
    _check_positive(y, True)
    js = joint_spectrum(bm, x, y)
    return js.superoperator(f.weights(js, theta, inverse=True))


@dataclass(frozen=True)
class EpsilonSchedule:
    eps0: float = 1e-2
    ratio: float = 0.25
    max_steps: int = 20
    rel_tol: float = 1e-8
    cap_factor: float = 1e12


@dataclass(frozen=True)
class QuasiEntropyResult:
    value: float
    epsilon_trace: tuple
    converged: bool

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def _quadratic(js: JointSpectrum, G, w: Element) -> float:
    return float(np.vdot(w.vec, w.algebra.weight_vector * js.apply_vec(G, w.vec)).real)


def quasi_entropy(bm: BimoduleStructure, mu, eta, w: Element, f: RepresentingFunction,
                  theta: float = 1.0, schedule: EpsilonSchedule = EpsilonSchedule()) -> QuasiEntropyResult:
    """``sup_eps <D_{mu+eps, eta+eps} w, w>`` along a geometric schedule.

    For strictly positive ``mu`` and ``eta`` the trace ends with the exact
    value at ``eps = 0``.  Otherwise the trace is kept for reporting and the
    value is the exact monotone limit on the joint spectrum: ``inf`` when
    ``w`` charges a spectral pair where the mean vanishes.
    """
    _check_theta(theta)
    x, y = _as_element(mu), _as_element(eta)
    _check_positive(x, False)
    _check_positive(y, False)
    if w.algebra != bm.target:
        raise AlgebraError("vector field must live in the bimodule target")
    wn2 = w.norm() ** 2
    if wn2 == 0:
        return QuasiEntropyResult(0.0, ((0.0, 0.0),), True)
    js = joint_spectrum(bm, x, y)
    cap = schedule.cap_factor * wn2
    trace, prev = [], None
    verdict = None
    for k in range(schedule.max_steps):
        eps = schedule.eps0 * schedule.ratio ** k
        G = js.weights(lambda s, t: np.clip(f.mean(s + eps, t + eps), 1e-300, None) ** (-theta))
        val = _quadratic(js, G, w)
        trace.append((eps, val))
        if val > cap:
            verdict = "diverged"
            break
        if prev is not None and val - prev <= schedule.rel_tol * abs(val):
            verdict = "converged"
            break
        prev = val
    strict = min(x.eigvalsh().min(), y.eigvalsh().min()) > STRICT_TOL * max(1.0, x.opnorm(), y.opnorm())
    if strict and verdict != "diverged":
        val = _quadratic(js, f.weights(js, theta, inverse=True), w)
        trace.append((0.0, val))
        return QuasiEntropyResult(val, tuple(trace), True)
    # the regularized values increase monotonically to sum |w_ij|^2 m(s_i, t_j)^-theta,
    # which is infinite as soon as w charges a spectral pair where the mean vanishes
    cut = RANK_TOL * max(1.0, x.opnorm(), y.opnorm())
    zero = js.weights(lambda s, t: (f.mean(s, t) <= cut).astype(float))
    if _quadratic(js, zero, w) > LIMIT_TOL * wn2:
        return QuasiEntropyResult(float("inf"), tuple(trace), True)

    def live(s, t):
        m = f.mean(s, t)
        return np.where(m > cut, np.where(m > cut, m, 1.0) ** (-theta), 0.0)

    return QuasiEntropyResult(_quadratic(js, js.weights(live), w), tuple(trace), True)


def compressed_quasi_entropy(bm: BimoduleStructure, mu, eta, w: Element, p: Element,
                             f: RepresentingFunction, theta: float = 1.0, tol: float = 1e-9) -> float:
    """Evaluate the quasi-entropy through the division operator of ``pAp``."""
    _check_theta(theta)
    x, y = _as_element(mu), _as_element(eta)
    rb = restrict_bimodule(bm, p)
    for z in (x, y):
        if (p @ z @ p - z).norm() > tol * max(1.0, z.norm()):
            raise AlgebraError("state is not supported in the compressed algebra")
    if not rb.contains(w, tol):
        raise AlgebraError("vector field is not in the compressed target")
    js = rb.joint_spectrum(x, y)
    for lam, mask in zip(js.lam, js.left_mask):
        if mask.any() and lam[mask].min() <= STRICT_TOL:
            raise AlgebraError("state is not strictly positive on the compressed algebra")
    for kap, mask in zip(js.kap, js.right_mask):
        if mask.any() and kap[mask].min() <= STRICT_TOL:
            raise AlgebraError("state is not strictly positive on the compressed algebra")
    return _quadratic(js, f.weights(js, theta, inverse=True), w)


def compressed_div_operator(bm: BimoduleStructure, x, y, p: Element, f: RepresentingFunction,
                            theta: float = 1.0) -> Superoperator:
    """``D_{x,y,p}`` extended by zero off ``phi(p) B psi(p)``."""
    rb = restrict_bimodule(bm, p)
    js = rb.joint_spectrum(_as_element(x), _as_element(y))
    return js.superoperator(f.weights(js, theta, inverse=True))
