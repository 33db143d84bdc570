"""Kantorovich problem on grids: exact solve, plan post-processing.

The exact path is the network simplex in :mod:`otsteer._netsimplex`.  An
entropic (Sinkhorn) mode is available for quick previews; it returns an
approximate plan and is never used where exact marginals are required.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._netsimplex import network_simplex
from .errors import InfeasibleError, SolverError

log = logging.getLogger(__name__)

MASS_BALANCE_ATOL = 1e-9
PRICING_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling ``pi`` of two grid densities.

    ``u`` and ``v`` are dual potentials with ``u_i + v_j <= C_ij`` (exact
    mode only); ``objective`` is ``sum C_ij pi_ij``.
    """

    pi: np.ndarray
    source: object
    target: object
    objective: float
    u: np.ndarray = None
    v: np.ndarray = None
    method: str = "exact"
    n_iter: int = 0
    wall_time: float = field(default=0.0, compare=False)

    def marginal_residual(self):
        r0 = np.abs(self.pi.sum(axis=1) - self.source.mass).max()
        r1 = np.abs(self.pi.sum(axis=0) - self.target.mass).max()
        return float(max(r0, r1))

    def support(self):
        i, j = np.nonzero(self.pi)
        return i, j, self.pi[i, j]


@dataclass(frozen=True, eq=False)
class MongeMapImage:
    """Row-normalized plan and the barycentric image of every source cell.

    Rows of zero-mass source cells are zero and flagged in ``arbitrary``.
    """

    tau: np.ndarray
    map_points: np.ndarray
    arbitrary: np.ndarray

    def low_mass(self, mass, threshold):
        return np.asarray(mass) < threshold


def _check_inputs(C, rho0, rho1):
    C = np.asarray(C, dtype=float)
    if C.shape != (len(rho0), len(rho1)):
        raise ValueError(
            f"cost matrix shape {C.shape} does not match densities "
            f"({len(rho0)}, {len(rho1)})")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    a = np.asarray(rho0.mass, dtype=float)
    b = np.asarray(rho1.mass, dtype=float)
    gap = abs(a.sum() - b.sum())
    if gap > MASS_BALANCE_ATOL:
        raise InfeasibleError(f"source and target masses differ by {gap:.3e}")
    return C, a, b * (a.sum() / b.sum())


def solve_kantorovich(C, rho0, rho1, method="exact", epsilon=1e-2,
                      max_iter=None):
    """Optimal coupling of ``rho0`` and ``rho1`` under cost matrix ``C``.

    Parameters
    ----------
    C : (nx, ny) array
    rho0, rho1 : GridDensity
    method : {"exact", "entropic"}
        ``"entropic"`` runs log-domain Sinkhorn with regularization
        ``epsilon`` relative to the cost range; its plan is approximate.
    max_iter : int, optional
        Pivot (or Sinkhorn iteration) budget.

    Returns
    -------
    TransportPlan

    Raises
    ------
    InfeasibleError
        If the total masses differ by more than 1e-9.
    SolverError
        If the exact solver does not terminate at an optimal vertex.
    """
    C, a, b = _check_inputs(C, rho0, rho1)
    t0 = time.perf_counter()
    cmin = float(C.min())
    span = float(C.max()) - cmin
    scale = span if span > 0 else 1.0
    Cn = (C - cmin) / scale
    if method == "exact":
        if max_iter is None:
            max_iter = 50 * C.size + 10_000
        flow, pot, n_iter, status = network_simplex(
            np.ascontiguousarray(Cn.ravel()), a, b, PRICING_TOL, max_iter)
        if status != 0:
            raise SolverError(
                "pivot budget exhausted" if status == 1 else "unbounded pivot")
        pi = flow.reshape(C.shape)
        nx = C.shape[0]
        u = -pot[:nx] * scale + cmin
        v = pot[nx:] * scale
        shift = u.max() if u.size else 0.0
        u, v = u - shift, v + shift
    elif method == "entropic":
        pi, u, v, n_iter = _sinkhorn(Cn, a, b, epsilon, max_iter or 10_000)
        u, v = u * scale + cmin, v * scale
    else:
        raise ValueError(f"unknown method {method!r}")
    wall = time.perf_counter() - t0
    objective = float(np.sum(C * pi))
    log.info("%s transport solve %dx%d: objective %.12g, %d iterations, %.2fs",
             method, C.shape[0], C.shape[1], objective, n_iter, wall)
    return TransportPlan(pi=pi, source=rho0, target=rho1, objective=objective,
                         u=u, v=v, method=method, n_iter=int(n_iter),
                         wall_time=wall)


def _sinkhorn(C, a, b, epsilon, max_iter, tol=1e-9):
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    K = -C / epsilon
    it = 0
    for it in range(1, max_iter + 1):
        f = -epsilon * logsumexp(K + (g / epsilon)[None, :], axis=1) + epsilon * la
        g = -epsilon * logsumexp(K + (f / epsilon)[:, None], axis=0) + epsilon * lb
        if it % 10 == 0:
            pi = np.exp(K + f[:, None] / epsilon + g[None, :] / epsilon)
            if np.abs(pi.sum(axis=1) - a).max() < tol:
                break
    pi = np.exp(K + f[:, None] / epsilon + g[None, :] / epsilon)
    return pi, f, g, it


def extract_map(plan):
    """Barycentric image of the plan: ``tau = pi / rho0`` row-wise, then ``tau @ Y``."""
    mass = np.asarray(plan.source.mass)
    arbitrary = mass <= 0.0
    tau = np.zeros_like(plan.pi)
    keep = ~arbitrary
    tau[keep] = plan.pi[keep] / plan.pi[keep].sum(axis=1, keepdims=True)
    map_points = tau @ plan.target.cells
    return MongeMapImage(tau=tau, map_points=map_points, arbitrary=arbitrary)


def transport_cost(plan, C):
    """``sum_ij C_ij pi_ij``."""
    C = np.asarray(C, dtype=float)
    if C.shape != plan.pi.shape:
        raise ValueError("cost matrix and plan shapes differ")
    return float(np.sum(C * plan.pi))


def optimality_certificate(plan, C):
    """Dual feasibility, complementary slackness and duality gap of a plan.

    Returns a dict with ``min_reduced_cost`` (should be >= 0 up to rounding),
    ``slackness`` (max ``pi_ij * |C_ij - u_i - v_j|``) and ``gap``.
    """
    if plan.u is None or plan.v is None:
        raise ValueError("plan carries no dual potentials")
    C = np.asarray(C, dtype=float)
    rc = C - plan.u[:, None] - plan.v[None, :]
    dual = float(plan.u @ plan.source.mass + plan.v @ plan.target.mass)
    return {
        "min_reduced_cost": float(rc.min()),
        "slackness": float(np.max(plan.pi * np.abs(rc))),
        "gap": plan.objective - dual,
    }
