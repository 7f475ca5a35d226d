import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from qot.algebra import AlgebraDescriptor, AlgebraError
from qot.bimodule import canonical_bimodule
from qot.examples import markov
from qot.quasientropy import (arithmetic, by_name, compressed_quasi_entropy, custom, div_operator, geometric,
                              harmonic, logarithmic, mult_operator, power_mean, quasi_entropy)

MEANS = [logarithmic(), arithmetic(), geometric(), harmonic(), power_mean(0.5), power_mean(-0.5)]

pos = st.floats(1e-3, 1e3)


@settings(max_examples=60, deadline=None)
@given(pos, pos)
def test_log_mean_matches_scalar_oracle(s, t):
    assert logarithmic().mean(np.array([s]), np.array([t]))[0] == pytest.approx(oracles.log_mean(s, t), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(pos, pos)
def test_means_are_ordered(s, t):
    S, T = np.array([s]), np.array([t])
    vals = [f.mean(S, T)[0] for f in (harmonic(), geometric(), logarithmic(), arithmetic())]
    assert all(a <= b * (1 + 1e-10) for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("f", MEANS, ids=lambda f: f"{f.kind}{f.param or ''}")
def test_representing_functions_validate(f):
    f.validate()
    # gradients against central differences
    s, t, h = 0.7, 2.3, 1e-6
    ds, dt = f.mean_grad(np.array([s]), np.array([t]))
    fd_s = (f.mean(np.array([s + h]), np.array([t])) - f.mean(np.array([s - h]), np.array([t]))) / (2 * h)
    fd_t = (f.mean(np.array([s]), np.array([t + h])) - f.mean(np.array([s]), np.array([t - h]))) / (2 * h)
    assert ds[0] == pytest.approx(fd_s[0], rel=1e-6) and dt[0] == pytest.approx(fd_t[0], rel=1e-6)


def test_means_vanish_on_boundary():
    z, one = np.array([0.0]), np.array([1.0])
    for f in (logarithmic(), geometric(), harmonic()):
        assert f.mean(z, one)[0] == 0
    assert arithmetic().mean(z, one)[0] == 0.5


def test_by_name_and_custom():
    assert by_name("log").is_log
    assert by_name("power_mean", alpha=0.25).param == 0.25
    with pytest.raises(AlgebraError):
        by_name("median")
    with pytest.raises(AlgebraError):
        power_mean(2.0)
    grid = np.geomspace(1e-2, 1e2, 41)
    c = custom(grid, (grid + 1) / 2, symmetric=True)
    S, T = np.array([0.3, 4.0]), np.array([1.2, 0.5])
    assert np.allclose(c.mean(S, T), arithmetic().mean(S, T), rtol=1e-4)
    with pytest.raises(AlgebraError):
        custom([1, 2, 3], [3, 2, 1])


def test_commutative_closed_form():
    rng = np.random.default_rng(0)
    A = AlgebraDescriptor((1, 1, 1), (0.2, 0.5, 0.3))
    bm = canonical_bimodule(A)
    mu, eta = rng.uniform(0.1, 2, 3), rng.uniform(0.1, 2, 3)
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    for f in MEANS:
        for th in (1.0, 0.4):
            val = quasi_entropy(bm, A.element([[[m]] for m in mu]), A.element([[[e]] for e in eta]),
                                A.element([[[v]] for v in w]), f, th).value
            expect = sum(c * abs(v) ** 2 / f.mean(np.array([m]), np.array([e]))[0] ** th
                         for c, m, e, v in zip(A.trace_weights, mu, eta, w))
            assert val == pytest.approx(expect, rel=1e-12)


def test_markov_edge_formula():
    ex = markov([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])
    bm = ex.bimodule
    rng = np.random.default_rng(1)
    F = rng.uniform(0.2, 2, 3)
    mu = ex.algebra.element([[[v]] for v in F])
    w = bm.target.random_element(rng)
    K, pi = np.array(ex.gradient.provenance["K"]), np.array(ex.gradient.provenance["pi"])
    edges = [(x, y) for x in range(3) for y in range(3) if x != y]
    expect = sum(K[x, y] * pi[x] * abs(w.vec[k]) ** 2 / oracles.log_mean(F[x], F[y]) for k, (x, y) in enumerate(edges))
    assert quasi_entropy(bm, mu, mu, w, logarithmic()).value == pytest.approx(expect, rel=1e-12)


def test_div_inverts_mult():
    rng = np.random.default_rng(2)
    A = AlgebraDescriptor((3, 2), (1.0, 0.5))
    bm = canonical_bimodule(A)
    x, y = A.random_density(rng).element, A.random_density(rng).element
    for f in MEANS:
        for th in (1.0, 0.6):
            M = mult_operator(bm, x, y, f, th)
            D = div_operator(bm, x, y, f, th)
            assert np.allclose((M @ D).matrix, np.eye(A.dim), atol=1e-8)


def test_rank_deficient_limit():
    A = AlgebraDescriptor((2,), (1.0,))
    bm = canonical_bimodule(A)
    p = A.element([np.diag([1.0, 0.0])])
    mu = A.element([np.diag([0.7, 0.0])])
    inside = A.element([np.diag([0.3, 0.0])])
    outside = A.element([[[0, 0], [1.0, 0]]])
    f = logarithmic()
    r_in = quasi_entropy(bm, mu, mu, inside, f)
    assert r_in.finite and r_in.value == pytest.approx(0.09 / 0.7, rel=1e-6)
    assert r_in.value == pytest.approx(compressed_quasi_entropy(bm, mu, mu, inside, p, f), rel=1e-6)
    for g in (logarithmic(), geometric(), harmonic()):
        assert not quasi_entropy(bm, mu, mu, outside, g).finite
    # the arithmetic mean stays positive off the diagonal of the support
    assert quasi_entropy(bm, mu, mu, outside, arithmetic()).value == pytest.approx(1 / 0.35)
    with pytest.raises(AlgebraError):
        quasi_entropy(bm, mu, mu, inside, f, theta=1.5)
    with pytest.raises(AlgebraError):
        quasi_entropy(bm, A.element([np.diag([1.0, -0.1])]), mu, inside, f)
