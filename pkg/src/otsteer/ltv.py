"""Discrete-time linear time-varying systems and their stacked operators.

A system ``z[k+1] = A[k] z[k] + B[k] u[k]`` over ``k = 0 .. tf-1`` is held
as an immutable :class:`LtvSystem`.  Everything downstream (costs-to-go,
controls, rollouts) is expressed through the state-transition table and
the batch operators built by :func:`stack_dynamics`.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import block_diag

# relative eigenvalue floor below which the Gramian counts as singular
CONTROLLABILITY_RTOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LtvSystem:
    """Sequences ``A[k]`` (n x n) and ``B[k]`` (n x m) for ``k < tf``."""

    A_seq: tuple
    B_seq: tuple

    def __post_init__(self):
        A_seq = tuple(_frozen(a) for a in self.A_seq)
        B_seq = tuple(_frozen(np.atleast_2d(b)) for b in self.B_seq)
        if len(A_seq) == 0:
            raise ValueError("horizon must be at least one step")
        if len(A_seq) != len(B_seq):
            raise ValueError(
                f"got {len(A_seq)} A matrices but {len(B_seq)} B matrices")
        n = A_seq[0].shape[0]
        m = B_seq[0].shape[1]
        for k, (A, B) in enumerate(zip(A_seq, B_seq)):
            if A.shape != (n, n):
                raise ValueError(f"A[{k}] has shape {A.shape}, expected {(n, n)}")
            if B.shape != (n, m):
                raise ValueError(f"B[{k}] has shape {B.shape}, expected {(n, m)}")
        if len(A_seq) < n:
            raise ValueError(
                f"horizon tf={len(A_seq)} must be at least the state dimension n={n}")
        object.__setattr__(self, "A_seq", A_seq)
        object.__setattr__(self, "B_seq", B_seq)

    @classmethod
    def lti(cls, A, B, horizon):
        """Time-invariant shorthand: repeat ``(A, B)`` for ``horizon`` steps."""
        return cls((A,) * horizon, (np.atleast_2d(B),) * horizon)

    @property
    def horizon(self):
        return len(self.A_seq)

    @property
    def state_dim(self):
        return self.A_seq[0].shape[0]

    @property
    def input_dim(self):
        return self.B_seq[0].shape[1]

    @cached_property
    def phi_table(self):
        """Array ``T`` with ``T[j, k] = Phi(j, k)`` for ``k <= j`` (zeros above)."""
        tf, n = self.horizon, self.state_dim
        table = np.zeros((tf + 1, tf + 1, n, n))
        for k in range(tf + 1):
            table[k, k] = np.eye(n)
            for j in range(k + 1, tf + 1):
                table[j, k] = self.A_seq[j - 1] @ table[j - 1, k]
        table.setflags(write=False)
        return table

    @cached_property
    def terminal_input_map(self):
        """``Upsilon(tf, 0) = [Phi(tf,1) B0 | ... | B(tf-1)]``, shape n x tf*m."""
        tf = self.horizon
        out = np.hstack([self.phi_table[tf, k + 1] @ self.B_seq[k]
                         for k in range(tf)])
        out.setflags(write=False)
        return out


@dataclass(frozen=True, eq=False)
class StackedCost:
    """Stage weights ``Q[k]`` (PSD) and ``R[k]`` (PD) with their block stacks."""

    Q_seq: tuple
    R_seq: tuple

    def __post_init__(self):
        Q_seq = tuple(_frozen(np.atleast_2d(q)) for q in self.Q_seq)
        R_seq = tuple(_frozen(np.atleast_2d(r)) for r in self.R_seq)
        if len(Q_seq) != len(R_seq) or not Q_seq:
            raise ValueError("Q_seq and R_seq must be non-empty and equally long")
        for k, Q in enumerate(Q_seq):
            if not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError(f"Q[{k}] is not symmetric")
            if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.abs(Q).max()):
                raise ValueError(f"Q[{k}] is not positive semidefinite")
        for k, R in enumerate(R_seq):
            if not np.allclose(R, R.T, atol=1e-12):
                raise ValueError(f"R[{k}] is not symmetric")
            if np.linalg.eigvalsh(R).min() <= 0.0:
                raise ValueError(f"R[{k}] is not positive definite")
        object.__setattr__(self, "Q_seq", Q_seq)
        object.__setattr__(self, "R_seq", R_seq)

    @classmethod
    def uniform(cls, Q, R, horizon):
        return cls((Q,) * horizon, (R,) * horizon)

    @classmethod
    def control_only(cls, sys):
        """``Q = 0``, ``R = I``: the minimum-energy stage cost."""
        n, m = sys.state_dim, sys.input_dim
        return cls.uniform(np.zeros((n, n)), np.eye(m), sys.horizon)

    @property
    def horizon(self):
        return len(self.Q_seq)

    @cached_property
    def Q_tilde(self):
        return block_diag(*self.Q_seq)

    @cached_property
    def R_tilde(self):
        return block_diag(*self.R_seq)

    def check_conforms(self, sys):
        if self.horizon != sys.horizon:
            raise ValueError(
                f"cost horizon {self.horizon} != system horizon {sys.horizon}")
        n, m = sys.state_dim, sys.input_dim
        if self.Q_seq[0].shape != (n, n) or self.R_seq[0].shape != (m, m):
            raise ValueError("cost weights do not match system dimensions")


@dataclass(frozen=True, eq=False)
class StackedDynamics:
    """Batch operators predicting ``z[0..tf-1]`` from ``(x, U)``.

    ``Omega @ x + Psi @ U`` stacks the states ``z[0], ..., z[tf-1]``;
    ``[S1 | S2] = Upsilon(tf, 0)`` maps ``U`` onto ``z[tf] - Phi(tf,0) x``.
    """

    Phi_table: np.ndarray
    Psi: np.ndarray
    Omega: np.ndarray
    S1: np.ndarray
    S2: np.ndarray

    @property
    def Phi_f(self):
        return self.Phi_table[-1, 0]

    @property
    def terminal_map(self):
        return np.hstack([self.S1, self.S2])


class Gramian(NamedTuple):
    matrix: np.ndarray
    controllable: bool
    min_eig: float
    max_eig: float


def state_transition(sys, j, k):
    """Return ``Phi(j, k) = A[j-1] ... A[k]`` (identity when ``j == k``)."""
    if not 0 <= k <= j <= sys.horizon:
        raise ValueError(
            f"need 0 <= k <= j <= tf={sys.horizon}, got j={j}, k={k}")
    return sys.phi_table[j, k]


def gramian(sys):
    """Reachability Gramian ``W_c(tf, 0)`` and whether it is positive definite.

    Singularity is reported through ``controllable`` rather than raised;
    the test is ``min_eig > 1e-10 * max_eig``.
    """
    tf = sys.horizon
    W = np.zeros((sys.state_dim, sys.state_dim))
    for k in range(tf):
        G = sys.phi_table[tf, k + 1] @ sys.B_seq[k]
        W += G @ G.T
    W = 0.5 * (W + W.T)
    eig = np.linalg.eigvalsh(W)
    lo, hi = float(eig[0]), float(eig[-1])
    controllable = hi > 0.0 and lo > CONTROLLABILITY_RTOL * hi
    return Gramian(W, controllable, lo, hi)


def stack_dynamics(sys):
    """Build ``Psi``, ``Omega``, ``S1`` and ``S2`` for ``sys``."""
    tf, n, m = sys.horizon, sys.state_dim, sys.input_dim
    phi = sys.phi_table
    Psi = np.zeros((tf * n, tf * m))
    Omega = np.zeros((tf * n, n))
    for l in range(tf):
        Omega[l * n:(l + 1) * n] = phi[l, 0]
        for k in range(l):
            Psi[l * n:(l + 1) * n, k * m:(k + 1) * m] = phi[l, k + 1] @ sys.B_seq[k]
    Ups = np.array(sys.terminal_input_map)
    split = (tf - n) * m
    return StackedDynamics(phi, Psi, Omega, Ups[:, :split], Ups[:, split:])


def simulate(sys, x0, U):
    """Roll the recursion forward from ``x0`` under stacked inputs ``U``.

    Returns an array of shape ``(tf+1, n)``; batched inputs ``x0`` of shape
    ``(N, n)`` with ``U`` of shape ``(N, tf*m)`` give ``(N, tf+1, n)``.
    """
    tf, n, m = sys.horizon, sys.state_dim, sys.input_dim
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    batched = x0.ndim == 2
    X = np.atleast_2d(x0)
    Us = np.atleast_2d(U)
    if X.shape[1] != n:
        raise ValueError(f"initial state has dimension {X.shape[1]}, expected {n}")
    if Us.shape[1] != tf * m:
        raise ValueError(f"input vector has length {Us.shape[1]}, expected {tf * m}")
    if Us.shape[0] != X.shape[0]:
        raise ValueError("batch sizes of x0 and U differ")
    Z = np.empty((X.shape[0], tf + 1, n))
    Z[:, 0] = X
    for k in range(tf):
        u = Us[:, k * m:(k + 1) * m]
        Z[:, k + 1] = Z[:, k] @ sys.A_seq[k].T + u @ sys.B_seq[k].T
    return Z if batched else Z[0]
