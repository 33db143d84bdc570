"""Command-line front end: ``otsteer {cost,solve,simulate,run,verify}``.

Artifacts written under ``--out``::

    cost_matrix.bin         dense cost matrix with a JSON header
    plan.csv, duals.csv     sparse coupling and dual potentials
    map.csv                 barycentric target of every source cell
    source.csv, target.csv  discretized densities
    sim/                    trajectories, assignments, histograms, summary
    heatmaps/               grayscale images of densities, map and histograms

Exit codes: 0 success, 2 configuration error, 3 provenance error (stale or
missing artifacts), 4 numerical failure.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import load_config
from .cost import cost_matrix
from .errors import (AssemblyError, ConfigError, DegenerateDensityError,
                     InfeasibleError, OutOfDomainError, ProvenanceError,
                     SolverError, UncontrollableSystemError)
from .grid import total_variation
from .oracle import kkt_reference
from .steering import (SteeringPlan, agent_lattice, make_evaluator,
                       monte_carlo, provenance_hash, rollout_batch)
from .transport import (TransportPlan, extract_map, optimality_certificate,
                        solve_kantorovich)

log = logging.getLogger("otsteer")

EXIT_OK, EXIT_CONFIG, EXIT_PROVENANCE, EXIT_NUMERICAL = 0, 2, 3, 4
NUMERICAL_ERRORS = (AssemblyError, DegenerateDensityError, InfeasibleError,
                    OutOfDomainError, SolverError, UncontrollableSystemError)

COST_FILE = "cost_matrix.bin"


def _timed(label):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, *exc):
            log.info("%s: %.2fs wall time", label, time.perf_counter() - self.t0)
    return _Timer()


def _coords(n, prefix):
    return [f"{prefix}{d + 1}" for d in range(n)]


def _heatmap(cfg, out, name, values):
    if cfg.grid.ndim == 2:
        io.write_pgm(out / "heatmaps" / f"{name}.pgm", cfg.grid.image(values),
                     comment=f"config_hash={cfg.config_hash}")


def cmd_cost(cfg, out, threads=1):
    evaluator, _ = make_evaluator(cfg.system, cfg.cost)
    with _timed("cost matrix"):
        C = cost_matrix(evaluator, cfg.source.cells, cfg.target.cells, threads=threads)
    meta = {"config_hash": cfg.problem_hash,
            "provenance": provenance_hash(evaluator, cfg.source, cfg.target),
            "n": cfg.system.state_dim, "t_f": cfg.system.horizon}
    io.write_cost_matrix(out / COST_FILE, C, meta)
    return C


def _load_cost(cfg, out, evaluator):
    path = out / COST_FILE
    if not path.exists():
        raise ProvenanceError(f"{path} is missing; run 'cost' first")
    C, meta = io.read_cost_matrix(path)
    if meta.get("config_hash") != cfg.problem_hash:
        raise ProvenanceError(f"{path} was produced by a different configuration")
    if meta.get("provenance") != provenance_hash(evaluator, cfg.source, cfg.target):
        raise ProvenanceError(f"{path} does not match this system and grid")
    return C, meta


def _duals_table(plan):
    nx, ny = plan.pi.shape
    rows = np.full((max(nx, ny), 3), np.nan)
    rows[:, 0] = np.arange(rows.shape[0])
    if plan.u is not None:
        rows[:nx, 1], rows[:ny, 2] = plan.u, plan.v
    return rows


def cmd_solve(cfg, out):
    evaluator, _ = make_evaluator(cfg.system, cfg.cost)
    C, _ = _load_cost(cfg, out, evaluator)
    with _timed("transport solve"):
        plan = solve_kantorovich(C, cfg.source, cfg.target,
                                 method=cfg.solver["method"],
                                 epsilon=cfg.solver["epsilon"])
    image = extract_map(plan)
    meta = {"config_hash": cfg.solve_hash}
    io.write_plan(out / "plan.csv", plan, meta)
    io.write_table(out / "duals.csv", ["index", "u", "v"], _duals_table(plan), meta,
                   fmt=["%d", io.FLOAT_FMT, io.FLOAT_FMT])
    n = cfg.grid.ndim
    rows = np.column_stack([np.arange(len(cfg.source)), cfg.source.cells,
                            cfg.source.mass, image.arbitrary, image.map_points])
    io.write_table(out / "map.csv",
                   ["cell"] + _coords(n, "x") + ["mass", "arbitrary"] + _coords(n, "y"),
                   rows, meta, fmt=["%d"] + [io.FLOAT_FMT] * (n + 1) + ["%d"] + [io.FLOAT_FMT] * n)
    io.write_density(out / "source.csv", cfg.source, {"config_hash": cfg.problem_hash})
    io.write_density(out / "target.csv", cfg.target, {"config_hash": cfg.problem_hash})
    _heatmap(cfg, out, "source", cfg.source.mass)
    _heatmap(cfg, out, "target", cfg.target.mass)
    for d in range(n):
        _heatmap(cfg, out, f"map_y{d + 1}", image.map_points[:, d])
    return plan


def load_steering_plan(cfg, out):
    """Rebuild a :class:`SteeringPlan` from the plan written by ``solve``."""
    path = out / "plan.csv"
    if not path.exists():
        raise ProvenanceError(f"{path} is missing; run 'solve' first")
    pi, meta = io.read_plan(path)
    if meta.get("config_hash") != cfg.solve_hash:
        raise ProvenanceError(f"{path} was produced by a different configuration")
    if pi.shape != (len(cfg.source), len(cfg.target)):
        raise ProvenanceError(f"{path} has shape {pi.shape}, grids need "
                              f"({len(cfg.source)}, {len(cfg.target)})")
    u = v = None
    duals = out / "duals.csv"
    if duals.exists() and io.read_header(duals).get("config_hash") == cfg.solve_hash:
        _, _, rows = io.read_table(duals)
        if rows.shape[0] == max(pi.shape):
            u, v = rows[: pi.shape[0], 1], rows[: pi.shape[1], 2]
    plan = TransportPlan(pi=pi, source=cfg.source, target=cfg.target,
                         objective=float(meta["objective"]), u=u, v=v,
                         method=meta.get("method", "exact"))
    evaluator, stage = make_evaluator(cfg.system, cfg.cost)
    return SteeringPlan(system=cfg.system, cost=stage, evaluator=evaluator,
                        plan=plan, map=extract_map(plan), source=cfg.source,
                        target=cfg.target,
                        cost_hash=provenance_hash(evaluator, cfg.source, cfg.target))


def _write_rollouts(cfg, sim, X0, targets, U, Z, costs, meta):
    n, m, tf = cfg.system.state_dim, cfg.system.input_dim, cfg.system.horizon
    N = X0.shape[0]
    ids = np.arange(N)
    io.write_table(sim / "assignments.csv",
                   ["id"] + _coords(n, "x") + _coords(n, "y") + ["cost"],
                   np.column_stack([ids, X0, targets, costs]).reshape(N, 2 * n + 2),
                   meta, fmt=["%d"] + [io.FLOAT_FMT] * (2 * n + 1))
    inputs = np.full((N, tf + 1, m), np.nan)
    inputs[:, :tf, :] = U.reshape(N, tf, m)
    steps = np.broadcast_to(np.arange(tf + 1), (N, tf + 1))
    rows = np.column_stack([np.repeat(ids, tf + 1), steps.ravel(),
                            Z.reshape(-1, n), inputs.reshape(-1, m)])
    io.write_table(sim / "trajectories.csv",
                   ["id", "step"] + _coords(n, "z") + _coords(m, "u"),
                   rows.reshape(-1, 2 + n + m), meta,
                   fmt=["%d", "%d"] + [io.FLOAT_FMT] * (n + m))


def cmd_simulate(cfg, out):
    sp = load_steering_plan(cfg, out)
    sim = out / "sim"
    sampling = cfg.sampling
    meta = {"config_hash": cfg.config_hash}
    n, tf = cfg.system.state_dim, cfg.system.horizon
    timesteps = sampling["timesteps"]
    with _timed("simulation"):
        if sampling["mode"] == "lattice":
            X0 = agent_lattice(cfg.grid, sampling["agents"])
            targets, U, Z, costs = rollout_batch(sp, X0)
        elif sampling["count"] > 0:
            mc = monte_carlo(sp, sampling["count"], sampling["seed"],
                             timesteps=timesteps, grid=cfg.grid)
            X0, targets, U, Z, costs = mc.initial, mc.targets, mc.inputs, mc.states, mc.costs
        else:
            # vacuous run: empty tables and a t = 0 histogram
            m = cfg.system.input_dim
            X0, targets = np.zeros((0, n)), np.zeros((0, n))
            U, Z, costs = np.zeros((0, tf * m)), np.zeros((0, tf + 1, n)), np.zeros(0)
            timesteps = [0]
    _write_rollouts(cfg, sim, X0, targets, U, Z, costs, meta)

    summary = {"config_hash": cfg.config_hash, "mode": sampling["mode"],
               "count": int(X0.shape[0]), "plan_objective": sp.plan.objective,
               "tv_to_target": {}, "tv_to_source": {}, "outside": {}}
    for t in timesteps:
        hist, outside = cfg.grid.histogram(Z[:, t, :])
        io.write_table(sim / f"hist_t{t:02d}.csv",
                       ["cell"] + _coords(n, "x") + ["fraction"],
                       np.column_stack([np.arange(cfg.grid.size), cfg.grid.centroids, hist]),
                       dict(meta, outside=repr(outside), step=t),
                       fmt=["%d"] + [io.FLOAT_FMT] * (n + 1))
        _heatmap(cfg, out, f"hist_t{t:02d}", hist)
        if X0.shape[0]:
            summary["tv_to_target"][str(t)] = total_variation(hist, cfg.target.mass, outside)
            summary["tv_to_source"][str(t)] = total_variation(hist, cfg.source.mass, outside)
            summary["outside"][str(t)] = outside
    if X0.shape[0]:
        summary["mean_cost"] = float(costs.mean())
        summary["cost_stderr"] = float(costs.std(ddof=1) / np.sqrt(costs.size)) if costs.size > 1 else 0.0
        summary["max_terminal_miss"] = float(np.abs(Z[:, -1, :] - targets).max())
    (sim / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _check(results, name, ok, detail):
    results.append(ok)
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def cmd_verify(cfg, out, n_spot=20, seed=0):
    """Re-check artifacts against the invariants they should satisfy."""
    results = []
    evaluator, _ = make_evaluator(cfg.system, cfg.cost)
    C, _ = _load_cost(cfg, out, evaluator)
    _check(results, "cost shape", C.shape == (len(cfg.source), len(cfg.target)), str(C.shape))

    rng = np.random.default_rng(seed)
    I = rng.integers(0, C.shape[0], n_spot)
    J = rng.integers(0, C.shape[1], n_spot)
    X, Y = cfg.source.cells[I], cfg.target.cells[J]
    direct = evaluator.cost(X, Y)
    scale = np.maximum(np.abs(direct), 1.0)
    err = float(np.max(np.abs(C[I, J] - direct) / scale))
    _check(results, "cost entries vs evaluator", err <= 1e-10, f"max rel err {err:.2e}")
    stage = cfg.cost if cfg.cost is not None else None
    if stage is not None:
        ref = np.array([kkt_reference(cfg.system, stage, x, y)[0] for x, y in zip(X, Y)])
        err = float(np.max(np.abs(C[I, J] - ref) / np.maximum(np.abs(ref), 1.0)))
        _check(results, "cost entries vs KKT oracle", err <= 1e-8, f"max rel err {err:.2e}")

    sp = load_steering_plan(cfg, out)
    plan = sp.plan
    res = plan.marginal_residual()
    exact = plan.method == "exact"
    tol = 1e-9 if exact else 1e-6
    _check(results, "plan marginals", res <= tol, f"max residual {res:.2e}")
    obj = float(np.sum(C * plan.pi))
    rel = abs(obj - plan.objective) / max(abs(obj), 1.0)
    _check(results, "plan objective", rel <= 1e-9, f"{plan.objective!r} (recomputed {obj!r})")
    if exact and plan.u is not None:
        cert = optimality_certificate(plan, C)
        span = max(float(np.ptp(C)), 1.0)
        ok = (cert["min_reduced_cost"] >= -1e-9 * span and cert["slackness"] <= 1e-9 * span
              and abs(cert["gap"]) <= 1e-9 * span)
        _check(results, "optimality certificate", ok,
               ", ".join(f"{k} {v:.2e}" for k, v in sorted(cert.items())))

    i, j, _ = plan.support()
    if exact and i.size > 1:
        a, b = rng.integers(0, i.size, (2, 2000))
        excess = C[i[a], j[a]] + C[i[b], j[b]] - C[i[a], j[b]] - C[i[b], j[a]]
        worst = float(excess.max())
        _check(results, "cyclical monotonicity", worst <= 1e-9 * max(float(np.ptp(C)), 1.0),
               f"max exchange gain {worst:.2e} over 2000 support pairs")

    sim = out / "sim"
    if (sim / "assignments.csv").exists():
        meta, _, rows = io.read_table(sim / "assignments.csv")
        _check(results, "simulation provenance", meta.get("config_hash") == cfg.config_hash,
               meta.get("config_hash", "missing"))
        if rows.shape[0]:
            n = cfg.system.state_dim
            X0, targets, costs = rows[:, 1:1 + n], rows[:, 1 + n:1 + 2 * n], rows[:, -1]
            t2, U, Z, c2 = rollout_batch(sp, X0)
            miss = float(np.abs(Z[:, -1, :] - targets).max())
            _check(results, "terminal states", miss <= 1e-6, f"max miss {miss:.2e}")
            drift = float(np.max(np.abs(c2 - costs) / np.maximum(np.abs(costs), 1.0)))
            _check(results, "realized costs", drift <= 1e-8, f"max rel err {drift:.2e}")
            lq = evaluator.cost(X0, targets)
            gap = float(np.max(np.abs(lq - costs) / np.maximum(np.abs(lq), 1.0)))
            _check(results, "realized vs cost-to-go", gap <= 1e-8, f"max rel err {gap:.2e}")
    return all(results)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="YAML config path or built-in name (lqr2d, swarm-logo)")
    common.add_argument("--out", required=True, help="artifact directory")
    common.add_argument("--threads", type=int, default=1, help="workers for the cost matrix")
    common.add_argument("--seed", type=int, default=None, help="override sampling.seed")
    common.add_argument("--solver", choices=["exact", "entropic"], default=None,
                        help="override solver.method")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(
        prog="otsteer",
        description="Optimal-transport density steering for linear time-varying systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("cost", parents=[common], help="compute the cost matrix")
    sub.add_parser("solve", parents=[common], help="solve the transport problem")
    sub.add_parser("simulate", parents=[common], help="steer samples or agents")
    sub.add_parser("run", parents=[common], help="cost, solve and simulate")
    sub.add_parser("verify", parents=[common], help="check artifacts against invariants")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO)
    out = Path(args.out)
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        cfg = load_config(args.config, seed=args.seed, solver=args.solver)
        out.mkdir(parents=True, exist_ok=True)
        if args.command in ("cost", "run"):
            cmd_cost(cfg, out, threads=args.threads)
        if args.command in ("solve", "run"):
            cmd_solve(cfg, out)
        if args.command in ("simulate", "run"):
            cmd_simulate(cfg, out)
        if args.command == "verify" and not cmd_verify(cfg, out):
            return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProvenanceError as exc:
        print(f"provenance error: {exc}", file=sys.stderr)
        return EXIT_PROVENANCE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
