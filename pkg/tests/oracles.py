"""
Independent reference solvers used by the tests.

None of these share code with the package: the cell oracles are dense
finite-difference minimisations on a fine periodic grid, the boundary value
oracle is the exact sine series for constant coefficients, and the tensor
oracles are explicit loops.
"""

import itertools

import numpy as np


def step(s, fraction, v1, v2):
    """Laminate profile on s in [0, 1): v1 below ``fraction``, v2 above."""
    return np.where(np.asarray(s) < fraction, v1, v2)


def _periodic_diff(M, h):
    """Forward difference (phi_{m+1} - phi_m)/h mapping nodes to edges."""
    D = -np.eye(M)
    D[np.arange(M), (np.arange(M) + 1) % M] = 1.0
    return D / h


def _periodic_second(M, h):
    D2 = -2.0 * np.eye(M)
    idx = np.arange(M)
    D2[idx, (idx + 1) % M] = 1.0
    D2[idx, (idx - 1) % M] = 1.0
    return D2 / h**2


def _solve_zero_mean(Mat, rhs):
    n = Mat.shape[0]
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = Mat
    big[n, :n] = big[:n, n] = 1.0
    sol = np.linalg.solve(big, np.concatenate([rhs, [0.0]]))
    return sol[:n]


def fd_cell_hs1_1d(k_of_s, a_of_s, M):
    """Minimise <k (1 + phi')^2 + a phi''^2> over periodic zero-mean phi.

    Nodes at s_m = m / M, k sampled at edge midpoints (m + 1/2) / M and a at
    the nodes.  Returns (nodes, phi, K_eff).
    """
    h = 1.0 / M
    s = np.arange(M) * h
    ke = k_of_s((np.arange(M) + 0.5) * h)
    an = a_of_s(s)
    D = _periodic_diff(M, h)
    D2 = _periodic_second(M, h)
    Mat = D.T @ (ke[:, None] * D) + D2.T @ (an[:, None] * D2)
    phi = _solve_zero_mean(Mat, -D.T @ ke)
    K_eff = float(np.mean(ke * (1.0 + D @ phi)))
    return s, phi, K_eff


def fd_cell_hs2_1d(a_of_s, M):
    """Minimise <a (1 + w'')^2> over periodic zero-mean w; nodes at (m + 1/2)/M."""
    h = 1.0 / M
    s = (np.arange(M) + 0.5) * h
    an = a_of_s(s)
    D2 = _periodic_second(M, h)
    Mat = D2.T @ (an[:, None] * D2)
    w = _solve_zero_mean(Mat, -D2.T @ an)
    A_eff = float(np.mean(an * (1.0 + D2 @ w)))
    return s, w, A_eff


def sine_series_bvp(K, A, g_coeff, x, n_terms=20001):
    """-K u'' + A u'''' = g on (0, 1) with u = u'' = 0 at both ends.

    Sine modes diagonalise the operator for these end conditions, so with
    g = sum_k g_k sin(k pi x) the solution is
    u = sum_k g_k / (K (k pi)^2 + A (k pi)^4) sin(k pi x).
    ``g_coeff(k)`` returns the sine coefficients for integers k >= 1.
    """
    k = np.arange(1, n_terms + 1)
    kp = k * np.pi
    amp = g_coeff(k) / (K * kp**2 + A * kp**4)
    x = np.asarray(x, dtype=float)
    return np.sin(np.outer(x, kp)) @ amp


def const_load_coeff(c):
    """Sine coefficients of the constant load c: 4c/(k pi) for odd k."""
    return lambda k: np.where(k % 2 == 1, 4.0 * c / (k * np.pi), 0.0)


def sin_load_coeff(m):
    """Sine coefficients of sin(m pi x)."""
    return lambda k: (k == m).astype(float)


def loop_contract_K(K, M):
    d = K.shape[0]
    out = np.zeros((d, d))
    for i, j, k, l in itertools.product(range(d), repeat=4):
        out[i, j] += K[i, j, k, l] * M[k, l]
    return out


def loop_contract_A(A, Q):
    d = A.shape[0]
    out = np.zeros((d, d, d))
    for i, j, k, n, l, p in itertools.product(range(d), repeat=6):
        out[i, j, k] += A[i, j, k, n, l, p] * Q[n, l, p]
    return out


def loop_contract_S_grad(S, G):
    """sum_{n,l} S_{nl}^{ijk} G_{nl}."""
    d = S.shape[0]
    out = np.zeros((d, d, d))
    for n, l, i, j, k in itertools.product(range(d), repeat=5):
        out[i, j, k] += S[n, l, i, j, k] * G[n, l]
    return out


def loop_contract_S_hess(S, Q):
    """sum_{k,l,m} S_{ij}^{klm} d^2 u_k / dx_m dx_l with Q[k, l, m] = d^2 u_k/dx_l dx_m."""
    d = S.shape[0]
    out = np.zeros((d, d))
    for i, j, k, l, m in itertools.product(range(d), repeat=5):
        out[i, j] += S[i, j, k, l, m] * Q[k, m, l]
    return out
