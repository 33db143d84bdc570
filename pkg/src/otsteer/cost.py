"""Closed-form costs-to-go and optimal open-loop controls.

Two evaluators share the same surface (``cost``, ``pairwise``, ``controls``):

* :class:`MinEnergyCost` -- control-energy-only objective, written through
  the reachability Gramian and its whitening transform;
* :class:`CostAssembly` -- the full LQ objective
  ``sum_k |z_k - y|^2_{Q_k} + |u_k|^2_{R_k}`` with ``z_0 = x``,
  ``z_tf = y`` enforced exactly, reduced to a quadratic form in ``(x, y)``.

The LQ reduction parameterizes the inputs that satisfy the terminal
constraint as ``U = Gamma_U1 U1 + Gamma_x x + Gamma_y y`` with an
unconstrained free vector ``U1``.  When the late-input block ``S2`` is
square and invertible this is the familiar split ``U2 = S2^+ (y - Phi x -
S1 U1)``.  Otherwise the parameterization is completed with null-space
directions of ``S2`` and, if ``S2`` is rank deficient, the part of the
constraint ``S2`` cannot absorb is imposed on ``U1`` as well, so the terminal
state is always hit exactly and the optimum is the true one.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import AssemblyError, InfeasibleError, UncontrollableSystemError
from .ltv import gramian, simulate, stack_dynamics

log = logging.getLogger(__name__)

PINV_RCOND = 1e-12
P_EIG_RTOL = 1e-12
KSTAR_RTOL = 1e-10
TERMINAL_RTOL = 1e-8


def _svd_rank(M, rcond):
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return U, s, Vt, 0
    return U, s, Vt, int(np.sum(s > rcond * s[0]))


def pinv(M, rcond=PINV_RCOND):
    """Moore-Penrose pseudoinverse with cutoff ``rcond * sigma_max``.

    The zero matrix (and any empty matrix) maps to the zero matrix of the
    transposed shape.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    U, s, Vt, r = _svd_rank(M, rcond)
    return (Vt[:r].T / s[:r]) @ U[:, :r].T


def null_basis(M, rcond=PINV_RCOND):
    """Orthonormal basis (as columns) of the null space of ``M``."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 0 or not np.any(M):
        return np.eye(M.shape[1])
    _, _, Vt, r = _svd_rank(M, rcond)
    return Vt[r:].T.copy()


def _sym_sqrt(W):
    eig, V = np.linalg.eigh(W)
    eig = np.clip(eig, 0.0, None)
    root = np.sqrt(eig)
    return (V * root) @ V.T, (V / root) @ V.T


def _as_pairs(x, y, n):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != n or y.shape[-1] != n:
        raise ValueError(f"points must have dimension {n}")
    return x, y


class MinEnergyCost:
    """Minimum control-energy cost-to-go ``(y - Phi x)^T W^-1 (y - Phi x)``.

    Parameters
    ----------
    sys : LtvSystem
        Must be controllable over its horizon.

    Raises
    ------
    UncontrollableSystemError
        If the reachability Gramian is singular.
    """

    def __init__(self, sys):
        G = gramian(sys)
        if not G.controllable:
            raise UncontrollableSystemError(
                f"Gramian is singular (min eig {G.min_eig:.3e}, max eig {G.max_eig:.3e})")
        self.state_dim = sys.state_dim
        self.W = G.matrix
        self.Phi_f = np.array(sys.phi_table[-1, 0])
        eig, V = np.linalg.eigh(self.W)
        self.W_inv = (V / eig) @ V.T
        self.W_half, self.W_half_inv = _sym_sqrt(self.W)

    def cost(self, x, y):
        x, y = _as_pairs(x, y, self.state_dim)
        d = y - x @ self.Phi_f.T
        return np.einsum("...i,ij,...j->...", d, self.W_inv, d)

    def whiten(self, x, y):
        x, y = _as_pairs(x, y, self.state_dim)
        return x @ (self.W_half_inv @ self.Phi_f).T, y @ self.W_half_inv.T

    def pairwise(self, X, Y):
        Xh, Yh = self.whiten(np.atleast_2d(X), np.atleast_2d(Y))
        C = (np.sum(Xh ** 2, axis=1)[:, None] + np.sum(Yh ** 2, axis=1)[None, :]
             - 2.0 * Xh @ Yh.T)
        return np.maximum(C, 0.0)

    def controls(self, sys, x, y):
        x, y = _as_pairs(x, y, self.state_dim)
        d = y - x @ self.Phi_f.T
        return d @ (np.asarray(sys.terminal_input_map).T @ self.W_inv).T

    def fingerprint(self):
        return [self.Phi_f, self.W]


def min_energy_cost(me, x, y):
    """Energy of the cheapest input sequence steering ``x`` to ``y``."""
    return me.cost(x, y)


def min_energy_controls(me, sys, x, y):
    """Stacked inputs ``u_k = B_k^T Phi(tf,k+1)^T W^-1 (y - Phi(tf,0) x)``."""
    return me.controls(sys, x, y)


def whiten(me, x, y):
    """Map ``(x, y)`` to ``(W^-1/2 Phi x, W^-1/2 y)``.

    In these coordinates the minimum-energy cost is the squared Euclidean
    distance between the two points.
    """
    return me.whiten(x, y)


@dataclass(frozen=True, eq=False)
class CostAssembly:
    """Matrices of the reduced LQ problem; see :func:`lq_cost_assembly`."""

    S1: np.ndarray
    S2: np.ndarray
    S2_pinv: np.ndarray
    Gamma_x: np.ndarray
    Gamma_y: np.ndarray
    Gamma_U1: np.ndarray
    A_x: np.ndarray
    A_y: np.ndarray
    A_U1: np.ndarray
    P: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    K3: np.ndarray
    K4: np.ndarray
    Q_x: np.ndarray
    Q_y: np.ndarray
    Q_xy: np.ndarray
    K_star: np.ndarray
    Phi_f: np.ndarray
    Omega: np.ndarray
    Psi: np.ndarray
    Q_tilde: np.ndarray
    R_tilde: np.ndarray
    # P^-1 A_U1^T Qt and P^-1 Gamma_U1^T Rt
    _PAQ: np.ndarray
    _PGR: np.ndarray
    qxy_condition: float

    @property
    def state_dim(self):
        return self.Phi_f.shape[0]

    @property
    def horizon(self):
        return self.Omega.shape[0] // self.state_dim

    def N_Q(self, x, y):
        """Stacked state offsets ``A_x x + A_y y`` (batched over leading axes)."""
        return x @ self.A_x.T + y @ self.A_y.T

    def N_R(self, x, y):
        """Stacked input offsets ``Gamma_x x + Gamma_y y``."""
        return x @ self.Gamma_x.T + y @ self.Gamma_y.T

    def objective(self, x, y, U1):
        """Total cost as a function of the free inputs ``U1``."""
        eq = self.N_Q(x, y) + U1 @ self.A_U1.T
        er = self.N_R(x, y) + U1 @ self.Gamma_U1.T
        return (np.einsum("...i,ij,...j->...", eq, self.Q_tilde, eq)
                + np.einsum("...i,ij,...j->...", er, self.R_tilde, er))

    def optimal_free_inputs(self, x, y):
        return -(self.N_Q(x, y) @ self._PAQ.T + self.N_R(x, y) @ self._PGR.T)

    def cost(self, x, y):
        x, y = _as_pairs(x, y, self.state_dim)
        return (np.einsum("...i,ij,...j->...", x, self.Q_x, x)
                + np.einsum("...i,ij,...j->...", y, self.Q_y, y)
                + 2.0 * np.einsum("...i,ij,...j->...", x, self.Q_xy, y))

    def pairwise(self, X, Y):
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        qx = np.einsum("ij,jk,ik->i", X, self.Q_x, X)
        qy = np.einsum("ij,jk,ik->i", Y, self.Q_y, Y)
        C = qx[:, None] + qy[None, :] + 2.0 * (X @ self.Q_xy) @ Y.T
        return np.maximum(C, 0.0)

    def controls_assembled(self, x, y):
        """``U = Gamma_U1 U1* + Gamma_x x + Gamma_y y``."""
        return self.optimal_free_inputs(x, y) @ self.Gamma_U1.T + self.N_R(x, y)

    def controls_kstar(self, x, y):
        """``U = K*(y - Phi x) - Gamma_U1 P^-1 A_U1^T Qt (Omega x - 1 (x) y)``."""
        d = y - x @ self.Phi_f.T
        off = x @ self.Omega.T - self._stack_y_batch(y)
        return d @ self.K_star.T - off @ (self.Gamma_U1 @ self._PAQ).T

    def _stack_y_batch(self, y):
        reps = (1,) * (y.ndim - 1) + (self.horizon,)
        return np.tile(y, reps)

    def controls(self, sys, x, y):
        return lq_optimal_controls(self, sys, x, y)

    def fingerprint(self):
        return [self.Q_x, self.Q_y, self.Q_xy]


def lq_cost_assembly(sys, cost):
    """Assemble the quadratic cost-to-go ``C(x, y)`` of the LQ steering problem.

    Parameters
    ----------
    sys : LtvSystem
        Controllable over its horizon.
    cost : StackedCost
        Stage weights, one pair per step.

    Returns
    -------
    CostAssembly

    Raises
    ------
    UncontrollableSystemError
        If the reachability Gramian is singular.
    AssemblyError
        If the reduced Hessian ``P`` is numerically singular.
    """
    cost.check_conforms(sys)
    G = gramian(sys)
    if not G.controllable:
        raise UncontrollableSystemError(
            f"Gramian is singular (min eig {G.min_eig:.3e}, max eig {G.max_eig:.3e})")
    tf, n, m = sys.horizon, sys.state_dim, sys.input_dim
    dyn = stack_dynamics(sys)
    S1, S2, Phi_f = dyn.S1, dyn.S2, np.array(dyn.Phi_f)
    p1 = S1.shape[1]

    S2_pinv = pinv(S2)
    U2s, s2, _, r2 = _svd_rank(S2, PINV_RCOND) if S2.size else (None, None, None, 0)
    N2 = null_basis(S2) if r2 > 0 else np.eye(S2.shape[1])
    if r2 == n:
        # S2 absorbs the whole terminal constraint; U1 is unrestricted
        Mp_Pi = np.zeros((p1, n))
        N_M = np.eye(p1)
    else:
        U_r = U2s[:, :r2] if r2 > 0 else np.zeros((n, 0))
        Pi = np.eye(n) - U_r @ U_r.T
        M = Pi @ S1
        Mp_Pi = pinv(M) @ Pi
        N_M = null_basis(M)
        if np.linalg.norm(M @ Mp_Pi - Pi) > 1e-8 * max(1.0, np.linalg.norm(Pi)):
            raise AssemblyError("terminal constraint is not reachable from the inputs")
        log.debug("S2 has rank %d < n=%d; constraining the early inputs", r2, n)

    Gamma_d = np.vstack([Mp_Pi, S2_pinv @ (np.eye(n) - S1 @ Mp_Pi)])
    Gamma_U1 = np.block([
        [N_M, np.zeros((p1, N2.shape[1]))],
        [-S2_pinv @ S1 @ N_M, N2],
    ])
    Gamma_x = -Gamma_d @ Phi_f
    Gamma_y = Gamma_d

    Qt, Rt = cost.Q_tilde, cost.R_tilde
    Psi, Omega = dyn.Psi, dyn.Omega
    ones = np.kron(np.ones((tf, 1)), np.eye(n))
    A_x = Omega + Psi @ Gamma_x
    A_y = Psi @ Gamma_y - ones
    A_U1 = Psi @ Gamma_U1

    P = A_U1.T @ Qt @ A_U1 + Gamma_U1.T @ Rt @ Gamma_U1
    P = 0.5 * (P + P.T)
    PAQ, PGR = _solve_P(P, A_U1.T @ Qt, Gamma_U1.T @ Rt)

    K1 = A_x - A_U1 @ (PAQ @ A_x + PGR @ Gamma_x)
    K2 = A_y - A_U1 @ (PAQ @ A_y + PGR @ Gamma_y)
    K3 = Gamma_x - Gamma_U1 @ (PGR @ Gamma_x + PAQ @ A_x)
    K4 = Gamma_y - Gamma_U1 @ (PGR @ Gamma_y + PAQ @ A_y)
    Q_x = K1.T @ Qt @ K1 + K3.T @ Rt @ K3
    Q_y = K2.T @ Qt @ K2 + K4.T @ Rt @ K4
    Q_xy = K1.T @ Qt @ K2 + K3.T @ Rt @ K4
    K_star = (np.eye(tf * m) - Gamma_U1 @ PGR - Gamma_U1 @ PAQ @ Psi) @ Gamma_y

    cond = float(np.linalg.cond(Q_xy))
    eig_sym = np.linalg.eigvalsh(0.5 * (Q_xy + Q_xy.T))
    log.debug("Q_xy condition number %.3e; symmetric-part eigenvalues in [%.3e, %.3e]",
              cond, eig_sym[0], eig_sym[-1])
    return CostAssembly(
        S1=S1, S2=S2, S2_pinv=S2_pinv,
        Gamma_x=Gamma_x, Gamma_y=Gamma_y, Gamma_U1=Gamma_U1,
        A_x=A_x, A_y=A_y, A_U1=A_U1, P=P,
        K1=K1, K2=K2, K3=K3, K4=K4,
        Q_x=0.5 * (Q_x + Q_x.T), Q_y=0.5 * (Q_y + Q_y.T), Q_xy=Q_xy,
        K_star=K_star, Phi_f=Phi_f, Omega=Omega, Psi=Psi,
        Q_tilde=Qt, R_tilde=Rt, _PAQ=PAQ, _PGR=PGR, qxy_condition=cond,
    )


def _solve_P(P, *rhs):
    if P.shape[0] == 0:
        return tuple(np.zeros((0, b.shape[1])) for b in rhs)
    try:
        fac = cho_factor(P)
        return tuple(cho_solve(fac, b) for b in rhs)
    except LinAlgError:
        eig, V = np.linalg.eigh(P)
        if eig[0] <= P_EIG_RTOL * eig[-1]:
            raise AssemblyError(
                f"P is numerically singular: smallest eigenvalue {eig[0]:.3e}") from None
        return tuple((V / eig) @ (V.T @ b) for b in rhs)


def lq_cost(asm, x, y):
    """``x^T Q_x x + y^T Q_y y + 2 x^T Q_xy y`` (batched over leading axes)."""
    return asm.cost(x, y)


def lq_optimal_controls(asm, sys, x, y):
    """Optimal stacked inputs steering ``x`` to ``y``.

    Both the assembled form and the ``K*`` form are evaluated and must
    agree; the result is rolled out to confirm the terminal state.

    Raises
    ------
    AssemblyError
        If the two forms disagree beyond ``1e-10`` relative.
    InfeasibleError
        If the rollout misses ``y``.
    """
    x, y = _as_pairs(x, y, asm.state_dim)
    U = asm.controls_assembled(x, y)
    U_k = asm.controls_kstar(x, y)
    scale = max(1.0, float(np.max(np.abs(U), initial=0.0)))
    gap = float(np.max(np.abs(U - U_k), initial=0.0))
    if gap > KSTAR_RTOL * scale:
        raise AssemblyError(f"K* form and assembled controls differ by {gap:.3e}")
    Z = simulate(sys, x, U)
    miss = np.max(np.abs(Z[..., -1, :] - y), initial=0.0)
    tol = TERMINAL_RTOL * max(1.0, float(np.max(np.abs(x), initial=0.0)),
                              float(np.max(np.abs(y), initial=0.0)))
    if miss > tol:
        raise InfeasibleError(f"terminal state misses the target by {miss:.3e}")
    return U


def stage_cost(cost, Z, U, y):
    """Realized ``sum_k |z_k - y|^2_{Q_k} + |u_k|^2_{R_k}`` over ``k < tf``."""
    Z = np.asarray(Z)
    U = np.asarray(U)
    tf = cost.horizon
    m = cost.R_seq[0].shape[0]
    total = np.zeros(Z.shape[:-2])
    for k in range(tf):
        e = Z[..., k, :] - y
        u = U[..., k * m:(k + 1) * m]
        total = total + np.einsum("...i,ij,...j->...", e, cost.Q_seq[k], e)
        total = total + np.einsum("...i,ij,...j->...", u, cost.R_seq[k], u)
    return total


ROW_BLOCK = 128


def cost_matrix(evaluator, X, Y, threads=1):
    """``C[i, j] = cost(X[i], Y[j])`` for either evaluator.

    Rows are evaluated in fixed-size blocks, optionally on ``threads``
    workers; block boundaries do not depend on the thread count, so neither
    does the result.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = evaluator.state_dim
    if X.shape[1] != n or Y.shape[1] != n:
        raise ValueError(f"points must have dimension {n}")
    blocks = [slice(i, i + ROW_BLOCK) for i in range(0, X.shape[0], ROW_BLOCK)]
    work = lambda sl: evaluator.pairwise(X[sl], Y)
    if threads <= 1 or len(blocks) < 2:
        parts = [work(sl) for sl in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    return np.vstack(parts)
