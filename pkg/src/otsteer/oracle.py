"""Reference solvers used to cross-check the closed-form paths.

These deliberately avoid the stacked operators of :mod:`otsteer.ltv` and
the parameterization of :mod:`otsteer.cost`: the prediction matrices are
recovered column by column from plain rollouts and the constrained
least-squares problem is solved as one saddle-point system.
"""

import itertools

import numpy as np

from .ltv import simulate


def _prediction_matrices(sys):
    tf, n, m = sys.horizon, sys.state_dim, sys.input_dim
    free = simulate(sys, np.eye(n), np.zeros((n, tf * m)))        # (n, tf+1, n)
    forced = simulate(sys, np.zeros((tf * m, n)), np.eye(tf * m))  # (tf*m, tf+1, n)
    Omega = free[:, :tf, :].reshape(n, tf * n).T
    Psi = forced[:, :tf, :].reshape(tf * m, tf * n).T
    Phi_f = free[:, tf, :].T
    Ups = forced[:, tf, :].T
    return Omega, Psi, Phi_f, Ups


def kkt_reference(sys, cost, x, y):
    """Optimal value and inputs of the fixed-endpoint LQ problem.

    Minimizes ``U^T Rt U + e^T Qt e`` with ``e = Omega x + Psi U - 1 (x) y``
    subject to ``Phi(tf,0) x + Upsilon(tf,0) U = y`` by solving the KKT
    system directly.  Returns ``(value, U)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tf, n = sys.horizon, sys.state_dim
    Omega, Psi, Phi_f, Ups = _prediction_matrices(sys)
    Qt, Rt = cost.Q_tilde, cost.R_tilde
    offset = Omega @ x - np.tile(y, tf)
    H = Rt + Psi.T @ Qt @ Psi
    g = Psi.T @ Qt @ offset
    N = H.shape[0]
    K = np.block([[2.0 * H, Ups.T], [Ups, np.zeros((n, n))]])
    rhs = np.concatenate([-2.0 * g, y - Phi_f @ x])
    sol = np.linalg.solve(K, rhs)
    U = sol[:N]
    e = offset + Psi @ U
    return float(U @ Rt @ U + e @ Qt @ e), U


def transport_vertex_enumeration(C, a, b, tol=1e-12):
    """Optimal value of the transportation LP by enumerating every basis.

    Exponential; intended for ``nx, ny <= 4``.  Returns ``(value, plan)``.
    """
    C = np.asarray(C, dtype=float)
    nx, ny = C.shape
    A = np.zeros((nx + ny, nx * ny))
    for i in range(nx):
        A[i, i * ny:(i + 1) * ny] = 1.0
    for j in range(ny):
        A[nx + j, j::ny] = 1.0
    rhs = np.concatenate([a, b])
    # one marginal equation is implied by the others
    A, rhs = A[:-1], rhs[:-1]
    k = nx + ny - 1
    best, best_plan = np.inf, None
    for basis in itertools.combinations(range(nx * ny), k):
        B = A[:, basis]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, rhs)
        if xb.min() < -tol:
            continue
        val = float(C.ravel()[list(basis)] @ xb)
        if val < best:
            best = val
            plan = np.zeros(nx * ny)
            plan[list(basis)] = np.clip(xb, 0.0, None)
            best_plan = plan.reshape(nx, ny)
    return best, best_plan
