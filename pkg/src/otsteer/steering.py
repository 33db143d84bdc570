"""Density steering: transport plan -> per-state targets -> controls -> rollouts."""

import hashlib
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cost import MinEnergyCost, cost_matrix, lq_cost_assembly, stage_cost
from .errors import InfeasibleError, ProvenanceError
from .grid import GridSpec
from .ltv import StackedCost, simulate
from .transport import extract_map, solve_kantorovich

log = logging.getLogger(__name__)

TERMINAL_ATOL = 1e-6


def provenance_hash(evaluator, source, target):
    h = hashlib.sha256()
    for arr in evaluator.fingerprint():
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    for g in (source.grid, target.grid):
        h.update(np.ascontiguousarray(g.centroids).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SteeringPlan:
    system: object
    cost: StackedCost
    evaluator: object
    plan: object
    map: object
    source: object
    target: object
    cost_hash: str

    def __post_init__(self):
        if provenance_hash(self.evaluator, self.source, self.target) != self.cost_hash:
            raise ProvenanceError("cost matrix was not produced by this evaluator and grids")

    @property
    def min_energy(self):
        return isinstance(self.evaluator, MinEnergyCost)

    def controls(self, x, y):
        return self.evaluator.controls(self.system, x, y)


class Trajectory(NamedTuple):
    states: np.ndarray    # (tf+1, n)
    inputs: np.ndarray    # (tf, m)
    realized_cost: float
    target: np.ndarray


class Assignment(NamedTuple):
    target: np.ndarray
    cell: int
    substituted: bool


def make_evaluator(system, cost=None):
    """``MinEnergyCost`` when ``cost`` is None, else the LQ ``CostAssembly``."""
    if cost is None:
        return MinEnergyCost(system), StackedCost.control_only(system)
    return lq_cost_assembly(system, cost), cost


def build_steering_plan(system, cost, source, target, C=None, C_hash=None,
                        method="exact", epsilon=1e-2, threads=1):
    """Solve the transport problem for ``system`` between two grid densities.

    ``cost=None`` selects the control-energy-only objective.  A precomputed
    cost matrix may be passed as ``C`` together with the ``C_hash`` it was
    stored under; a hash that does not match this evaluator and these grids
    raises :class:`ProvenanceError`.
    """
    evaluator, stage = make_evaluator(system, cost)
    expected = provenance_hash(evaluator, source, target)
    if C is not None and C_hash is not None and C_hash != expected:
        raise ProvenanceError("cost matrix was built for a different system or grid")
    if C is None:
        C = cost_matrix(evaluator, source.cells, target.cells, threads=threads)
    plan = solve_kantorovich(C, source, target, method=method, epsilon=epsilon)
    image = extract_map(plan)
    return SteeringPlan(system=system, cost=stage, evaluator=evaluator, plan=plan,
                        map=image, source=source, target=target,
                        cost_hash=expected)


def _substitute_cells(sp):
    mass = np.asarray(sp.source.mass)
    cells = np.arange(mass.size)
    live = np.flatnonzero(mass > 0)
    dead = np.flatnonzero(mass <= 0)
    if dead.size:
        pts = sp.source.cells
        d = np.sum((pts[dead][:, None, :] - pts[live][None, :, :]) ** 2, axis=-1)
        cells[dead] = live[np.argmin(d, axis=1)]
    return cells


def assign_targets(sp, X):
    """Vectorized :func:`assign_target`: ``(targets, cells, substituted)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cells = sp.source.grid.cell_index(X)
    sub = _substitute_cells(sp)
    used = sub[cells]
    return sp.map.map_points[used], cells, used != cells


def assign_target(sp, x0):
    """Terminal state for ``x0``: the barycentric image of its grid cell.

    Cells without source mass borrow the image of the nearest cell that has
    mass; ``substituted`` records that.
    """
    targets, cells, sub = assign_targets(sp, x0)
    return Assignment(targets[0], int(cells[0]), bool(sub[0]))


def rollout_batch(sp, X):
    """Targets, stacked inputs, states and realized costs for many initial states."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    targets, _, _ = assign_targets(sp, X)
    U = sp.controls(X, targets)
    Z = simulate(sp.system, X, U)
    costs = stage_cost(sp.cost, Z, U, targets)
    miss = np.max(np.abs(Z[:, -1, :] - targets), initial=0.0)
    if miss > TERMINAL_ATOL:
        raise InfeasibleError(f"rollout misses its target by {miss:.3e}")
    return targets, U, Z, costs


def rollout(sp, x0):
    """Steer ``x0`` to its assigned target and record the trajectory."""
    targets, U, Z, costs = rollout_batch(sp, x0)
    m = sp.system.input_dim
    return Trajectory(states=Z[0], inputs=U[0].reshape(-1, m),
                      realized_cost=float(costs[0]), target=targets[0])


def sample_density(density, n_samples, rng):
    """Inverse-CDF draw of cells, then a uniform point inside each cell."""
    cdf = np.cumsum(density.mass)
    cdf /= cdf[-1]
    cells = np.searchsorted(cdf, rng.random(n_samples), side="right")
    cells = np.minimum(cells, cdf.size - 1)
    # side="right" never lands on a zero-mass cell
    grid = density.grid
    offsets = (rng.random((n_samples, grid.ndim)) - 0.5) * grid.widths
    return grid.centroids[cells] + offsets


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    initial: np.ndarray
    targets: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    costs: np.ndarray
    histograms: dict
    outside: dict


def monte_carlo(sp, n_samples, seed, timesteps=None, grid=None):
    """Sample initial states from the source density and roll them all out.

    Histograms are binned on ``grid`` (default: the target grid) at each
    requested timestep (default: ``0`` and ``tf``).  All randomness comes
    from one generator seeded with ``seed`` and is consumed before any
    rollout, so results do not depend on how the rollouts are scheduled.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    tf = sp.system.horizon
    timesteps = [0, tf] if timesteps is None else list(timesteps)
    grid = grid or sp.target.grid
    rng = np.random.default_rng(seed)
    X0 = sample_density(sp.source, n_samples, rng)
    targets, U, Z, costs = rollout_batch(sp, X0)
    hists, outside = {}, {}
    for t in timesteps:
        hists[t], outside[t] = grid.histogram(Z[:, t, :])
    return MonteCarloResult(initial=X0, targets=targets, states=Z, inputs=U,
                            costs=costs, histograms=hists, outside=outside)


def agent_lattice(grid, counts=None):
    """Agents at evenly spaced points: the cell centers of a lattice on ``grid``'s box."""
    counts = grid.counts if counts is None else counts
    return GridSpec(grid.lower, grid.upper, counts).centroids.copy()


def swarm_assignment(sp, agents):
    """Assign every agent a target through the map and steer it there."""
    agents = np.atleast_2d(np.asarray(agents, dtype=float))
    targets, U, Z, costs = rollout_batch(sp, agents)
    m = sp.system.input_dim
    return [(agents[i], targets[i],
             Trajectory(Z[i], U[i].reshape(-1, m), float(costs[i]), targets[i]))
            for i in range(agents.shape[0])]


__all__ = [
    "SteeringPlan", "Trajectory", "Assignment", "MonteCarloResult",
    "build_steering_plan", "make_evaluator", "assign_target", "assign_targets",
    "rollout", "rollout_batch", "monte_carlo", "swarm_assignment",
    "sample_density", "agent_lattice", "provenance_hash",
]
