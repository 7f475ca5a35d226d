"""Independent reference computations used by the tests.

Nothing here calls the package solvers; every oracle works with plain
numpy/scipy on scalar or explicit-matrix formulas.
"""
import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.optimize import minimize


def log_mean(s, t):
    s, t = float(s), float(t)
    if s <= 0 or t <= 0:
        return 0.0
    if abs(s - t) <= 1e-12 * max(s, t):
        return 0.5 * (s + t)
    return (s - t) / (np.log(s) - np.log(t))


def stationary(K):
    w, v = np.linalg.eig(np.asarray(K, float).T)
    p = np.real(v[:, np.argmin(abs(w - 1))])
    return p / p.sum()


def markov2_distance(K, p0, p1):
    """Closed-form distance on a two-state chain between P(state 0) = p0 and p1.

    With probabilities ``q = (p, 1 - p)`` and densities ``q / pi`` the slice is
    one-dimensional and ``g(p) = 1 / (2 K01 pi0 m_log(p/pi0, (1-p)/pi1))``.
    """
    K = np.asarray(K, float)
    pi = stationary(K)
    g = lambda p: 1.0 / (2 * K[0, 1] * pi[0] * log_mean(p / pi[0], (1 - p) / pi[1]))
    a, b = sorted((p0, p1))
    val, _ = quad(lambda p: np.sqrt(g(p)), a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def _graph_laplacian(K, pi, q):
    n = len(pi)
    L = np.zeros((n, n))
    for x in range(n):
        for y in range(n):
            if x != y and K[x, y] > 0:
                c = 2 * K[x, y] * pi[x] * log_mean(q[x] / pi[x], q[y] / pi[y])
                L[x, y] -= c
                L[x, x] += c
    return L


def markov_bb_distance(K, q0, q1, steps=32):
    """Brute-force Benamou-Brenier on a finite chain in probability coordinates.

    Interior node probabilities are free (the last state absorbs the mass
    constraint).  Each time step costs ``q_dot^T L(mid)^+ q_dot dt / 2`` with
    the log-mean graph Laplacian ``L`` at the midpoint; scipy's L-BFGS-B with
    finite-difference gradients minimizes the sum.  The distance is
    ``sqrt(2 E)``.
    """
    K = np.asarray(K, float)
    pi = stationary(K)
    q0, q1 = np.asarray(q0, float), np.asarray(q1, float)
    n = len(pi)
    dt = 1.0 / steps
    ts = np.linspace(0, 1, steps + 1)[1:-1, None]
    init = ((1 - ts) * q0 + ts * q1)[:, :-1].ravel()

    def nodes(z):
        Z = z.reshape(steps - 1, n - 1)
        Q = np.hstack([Z, 1 - Z.sum(axis=1, keepdims=True)])
        return np.vstack([q0, Q, q1])

    def energy(z):
        Q = nodes(z)
        if Q.min() <= 0:
            return 1e6
        E = 0.0
        for k in range(steps):
            qd = (Q[k + 1] - Q[k]) / dt
            L = _graph_laplacian(K, pi, 0.5 * (Q[k] + Q[k + 1]))
            E += 0.5 * dt * qd @ np.linalg.pinv(L) @ qd
        return E

    res = minimize(energy, init, method="L-BFGS-B", bounds=[(1e-9, 1)] * init.size,
                   options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 20000, "maxfun": 10 ** 7})
    return float(np.sqrt(2 * res.fun))


def partial_trace_last(X, d_keep, d_drop):
    """``Tr_2`` of ``X`` on ``C^{d_keep} (x) C^{d_drop}``."""
    return np.einsum("ajbj->ab", X.reshape(d_keep, d_drop, d_keep, d_drop))


def heat_matrix_oracle(L, t):
    return expm(-t * L)


def commutator_matrix(D):
    """Matrix of ``x -> i[D, x]`` on row-major vectorized ``n x n`` matrices."""
    n = D.shape[0]
    I = np.eye(n)
    return 1j * (np.kron(D, I) - np.kron(I, D.T))
