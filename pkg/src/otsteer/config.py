"""YAML experiment configurations.

A configuration names a system, a stage cost, a grid, source and target
densities, solver options and a sampling plan.  Everything is validated
when the file is loaded, so errors surface before any computation and
name the offending field.

Matrix sequences (``system.A``, ``system.B``, ``cost.Q``, ``cost.R``) may be
given as one matrix (held constant over the horizon), as a list of
per-step matrices, or as a list of ``{value: M, steps: k}`` segments.
"""

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from .errors import ConfigError, DegenerateDensityError
from .grid import GridSpec, discretize
from .io import read_pgm
from .ltv import LtvSystem, StackedCost, gramian

BUILTIN = {"lqr2d": "lqr2d.yaml", "swarm-logo": "swarm-logo.yaml"}
PROBLEM_KEYS = ("system", "cost", "grid", "source", "target")


def _matrix(value, where):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(where, "must be a numeric matrix") from None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ConfigError(where, f"must be a finite 2-D matrix, got shape {M.shape}")
    return M


def _sequence(value, horizon, where):
    """Per-step matrices from any of the accepted spellings."""
    if value is None:
        raise ConfigError(where, "is required")
    if isinstance(value, list) and value and isinstance(value[0], dict):
        seq = []
        for i, seg in enumerate(value):
            if set(seg) != {"value", "steps"}:
                raise ConfigError(f"{where}[{i}]", "segments need exactly 'value' and 'steps'")
            steps = seg["steps"]
            if not isinstance(steps, int) or steps < 1:
                raise ConfigError(f"{where}[{i}].steps", "must be a positive integer")
            seq += [_matrix(seg["value"], f"{where}[{i}].value")] * steps
    else:
        arr = np.asarray(value, dtype=object)
        if arr.ndim == 3:
            seq = [_matrix(m, f"{where}[{k}]") for k, m in enumerate(value)]
        else:
            seq = [_matrix(value, where)] * horizon
    if len(seq) != horizon:
        raise ConfigError(where, f"has {len(seq)} steps, horizon is {horizon}")
    return seq


def _vector(value, dim, where):
    try:
        v = np.array(value, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError(where, "must be numeric") from None
    if v.size != dim or not np.all(np.isfinite(v)):
        raise ConfigError(where, f"must be a finite vector of length {dim}")
    return v


def _gaussian_pdf(spec, dim, where):
    mean = _vector(spec.get("mean"), dim, f"{where}.mean")
    cov = _matrix(spec.get("covariance"), f"{where}.covariance")
    if cov.shape != (dim, dim) or not np.allclose(cov, cov.T):
        raise ConfigError(f"{where}.covariance", f"must be a symmetric {dim}x{dim} matrix")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ConfigError(f"{where}.covariance", "must be positive definite")
    return stats.multivariate_normal(mean, cov).pdf


def _density_callable(spec, grid, base, where):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(where, "needs a 'type'")
    kind = spec["type"]
    dim = grid.ndim
    if kind == "uniform":
        return lambda P: np.ones(len(P))
    if kind == "gaussian":
        pdf = _gaussian_pdf(spec, dim, where)
        return lambda P: np.atleast_1d(pdf(P))
    if kind == "gaussian_mixture":
        comps = spec.get("components")
        if not isinstance(comps, list) or not comps:
            raise ConfigError(f"{where}.components", "must be a non-empty list")
        weights, pdfs = [], []
        for i, comp in enumerate(comps):
            w = comp.get("weight")
            if not isinstance(w, (int, float)) or w <= 0:
                raise ConfigError(f"{where}.components[{i}].weight", "must be positive")
            weights.append(float(w))
            pdfs.append(_gaussian_pdf(comp, dim, f"{where}.components[{i}]"))
        return lambda P: sum(w * np.atleast_1d(f(P)) for w, f in zip(weights, pdfs))
    if kind == "raster":
        path = spec.get("path")
        if not isinstance(path, str):
            raise ConfigError(f"{where}.path", "must be a file path")
        full = (base / path).resolve()
        try:
            img = read_pgm(full)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{where}.path", f"cannot read raster: {exc}") from None
        if spec.get("invert", False):
            img = img.max() - img
        return img
    raise ConfigError(f"{where}.type", f"unknown density type {kind!r}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated experiment.  ``raw`` is the parsed YAML mapping."""

    raw: dict
    base: Path
    name: str
    system: LtvSystem
    cost: StackedCost       # None selects the control-energy cost
    grid: GridSpec
    source: object
    target: object
    solver: dict
    sampling: dict
    raster_digests: dict = field(default_factory=dict)

    def _digest(self, keys):
        payload = {k: self.raw.get(k) for k in keys}
        payload["rasters"] = {k: v for k, v in self.raster_digests.items() if k in keys}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def problem_hash(self):
        """Identifies the cost matrix: system, cost, grid and densities."""
        return self._digest(PROBLEM_KEYS)

    @property
    def solve_hash(self):
        """Identifies the plan: the problem plus solver options."""
        return self._digest(PROBLEM_KEYS + ("solver",))

    @property
    def config_hash(self):
        """Identifies every output, sampling included."""
        return self._digest(PROBLEM_KEYS + ("solver", "sampling"))


def resolve_path(name_or_path):
    """A built-in config name or a filesystem path."""
    if name_or_path in BUILTIN:
        return Path(str(resources.files("otsteer") / "configs" / BUILTIN[name_or_path]))
    return Path(name_or_path)


def load_config(name_or_path, seed=None, solver=None):
    """Parse and validate a configuration.

    ``seed`` and ``solver`` override ``sampling.seed`` and ``solver.method``.
    Raises :class:`ConfigError` naming the first invalid field.
    """
    path = resolve_path(name_or_path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    raw.setdefault("solver", {"method": "exact"})
    raw.setdefault("sampling", {"mode": "monte_carlo", "count": 0, "seed": 0})
    if seed is not None:
        raw["sampling"]["seed"] = int(seed)
    if solver is not None:
        raw["solver"]["method"] = solver
    return build_config(raw, path.parent, name=raw.get("name", path.stem))


def build_config(raw, base=Path("."), name="experiment"):
    base = Path(base)
    for key in PROBLEM_KEYS:
        if key not in raw:
            raise ConfigError(key, "section is required")

    sysraw = raw["system"]
    horizon = sysraw.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("system.horizon", "must be a positive integer")
    A_seq = _sequence(sysraw.get("A"), horizon, "system.A")
    B_seq = _sequence(sysraw.get("B"), horizon, "system.B")
    n = A_seq[0].shape[0]
    if n > horizon:
        raise ConfigError("system.horizon", f"must be at least the state dimension {n}")
    try:
        system = LtvSystem(A_seq, B_seq)
    except ValueError as exc:
        raise ConfigError("system", str(exc)) from None
    if not gramian(system).controllable:
        raise ConfigError("system", "is not controllable over the horizon")

    costraw = raw["cost"]
    kind = costraw.get("type", "lq")
    if kind == "min_energy":
        cost = None
    elif kind == "lq":
        Q = _sequence(costraw.get("Q"), horizon, "cost.Q")
        R = _sequence(costraw.get("R"), horizon, "cost.R")
        try:
            cost = StackedCost(Q, R)
            cost.check_conforms(system)
        except ValueError as exc:
            raise ConfigError("cost", str(exc)) from None
    else:
        raise ConfigError("cost.type", f"must be 'lq' or 'min_energy', got {kind!r}")

    g = raw["grid"]
    try:
        grid = GridSpec(g.get("lower"), g.get("upper"), g.get("cells"))
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid", str(exc)) from None
    if grid.ndim != n:
        raise ConfigError("grid", f"has {grid.ndim} axes, state dimension is {n}")

    digests = {}
    densities = {}
    for key in ("source", "target"):
        spec = raw[key]
        dens = _density_callable(spec, grid, base, key)
        if spec.get("type") == "raster":
            digests[key] = hashlib.sha256((base / spec["path"]).resolve().read_bytes()).hexdigest()
        try:
            densities[key] = discretize(dens, grid)
        except DegenerateDensityError as exc:
            raise ConfigError(key, str(exc)) from None
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None

    solver = dict(raw["solver"] or {})
    method = solver.setdefault("method", "exact")
    if method not in ("exact", "entropic"):
        raise ConfigError("solver.method", f"must be 'exact' or 'entropic', got {method!r}")
    eps = solver.setdefault("epsilon", 1e-2)
    if not isinstance(eps, (int, float)) or eps <= 0:
        raise ConfigError("solver.epsilon", "must be positive")

    sampling = dict(raw["sampling"] or {})
    mode = sampling.setdefault("mode", "monte_carlo")
    if mode == "monte_carlo":
        count = sampling.setdefault("count", 0)
        if not isinstance(count, int) or count < 0:
            raise ConfigError("sampling.count", "must be a nonnegative integer")
        seed = sampling.setdefault("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("sampling.seed", "must be a nonnegative integer")
    elif mode == "lattice":
        agents = sampling.setdefault("agents", list(grid.counts))
        if (not isinstance(agents, list) or len(agents) != n
                or not all(isinstance(a, int) and a >= 1 for a in agents)):
            raise ConfigError("sampling.agents", f"must list {n} positive agent counts")
    else:
        raise ConfigError("sampling.mode", f"must be 'monte_carlo' or 'lattice', got {mode!r}")
    steps = sampling.setdefault("timesteps", [0, horizon])
    if (not isinstance(steps, list)
            or not all(isinstance(t, int) and 0 <= t <= horizon for t in steps)):
        raise ConfigError("sampling.timesteps", f"must be integers in [0, {horizon}]")

    raw = dict(raw, solver=solver, sampling=sampling)
    return ExperimentConfig(raw=raw, base=base, name=str(name), system=system,
                            cost=cost, grid=grid, source=densities["source"],
                            target=densities["target"], solver=solver,
                            sampling=sampling, raster_digests=digests)
