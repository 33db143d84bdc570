import subprocess
import sys

import numpy as np
import pytest
import yaml

from otsteer import io
from otsteer.cli import main
from otsteer.config import load_config
from otsteer.errors import ConfigError
from otsteer.oracle import kkt_reference

SMALL = {
    "system": {"horizon": 3, "A": [[1.0, 0.1], [0.0, 1.0]], "B": [[0.0], [1.0]]},
    "cost": {"type": "lq", "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]]},
    "grid": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0], "cells": [4, 4]},
    "source": {"type": "gaussian", "mean": [-0.2, 0.1], "covariance": [[0.3, 0.0], [0.0, 0.2]]},
    "target": {"type": "uniform"},
    "solver": {"method": "exact"},
    "sampling": {"mode": "monte_carlo", "count": 50, "seed": 3, "timesteps": [0, 3]},
}


def write_config(tmp_path, cfg, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def variant(**sections):
    cfg = yaml.safe_load(yaml.safe_dump(SMALL))
    for key, value in sections.items():
        cfg[key] = value
    return cfg


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("section,value,field", [
    ("system", {"horizon": 1, "A": [[1, 0], [0, 1]], "B": [[1], [0]]}, "system.horizon"),
    ("system", {"horizon": 3, "A": [[1, 0], [0, 1]], "B": [[1], [0]]}, "system"),
    ("system", {"horizon": 3, "A": [[[1, 0], [0, 1]]] * 2, "B": [[1], [0]]}, "system.A"),
    ("cost", {"type": "lq", "Q": [[1, 0], [0, 1]], "R": [[-1.0]]}, "cost"),
    ("cost", {"type": "quartic"}, "cost.type"),
    ("grid", {"lower": [0, 0], "upper": [0, 1], "cells": [4, 4]}, "grid"),
    ("grid", {"lower": [0], "upper": [1], "cells": [4]}, "grid"),
    ("source", {"type": "gaussian", "mean": [9.0, 9.0], "covariance": [[1e-4, 0], [0, 1e-4]]}, "source"),
    ("source", {"type": "gaussian", "mean": [0, 0], "covariance": [[1, 2], [2, 1]]}, "source.covariance"),
    ("target", {"type": "raster", "path": "missing.pgm"}, "target.path"),
    ("target", {"type": "cube"}, "target.type"),
    ("solver", {"method": "greedy"}, "solver.method"),
    ("sampling", {"mode": "monte_carlo", "count": -1}, "sampling.count"),
    ("sampling", {"mode": "lattice", "agents": [3]}, "sampling.agents"),
    ("sampling", {"mode": "monte_carlo", "count": 5, "timesteps": [0, 99]}, "sampling.timesteps"),
])
def test_invalid_config_names_field(tmp_path, capsys, section, value, field):
    path = write_config(tmp_path, variant(**{section: value}))
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.field == field
    assert main(["cost", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_single_cell_cost_file(tmp_path):
    cfg = variant(grid={"lower": [-1.0, -1.0], "upper": [1.0, 1.0], "cells": [1, 1]})
    path = write_config(tmp_path, cfg)
    assert main(["cost", "--config", path, "--out", str(tmp_path)]) == 0
    C, meta = io.read_cost_matrix(tmp_path / "cost_matrix.bin")
    assert C.shape == (1, 1)
    exp = load_config(path)
    ref, _ = kkt_reference(exp.system, exp.cost, np.zeros(2), np.zeros(2))
    assert C[0, 0] == pytest.approx(ref, abs=1e-12)
    assert meta["config_hash"] == exp.problem_hash


def test_cost_rerun_is_byte_identical(tmp_path):
    path = write_config(tmp_path, SMALL)
    main(["cost", "--config", path, "--out", str(tmp_path / "a")])
    main(["cost", "--config", path, "--out", str(tmp_path / "b"), "--threads", "3"])
    assert (tmp_path / "a/cost_matrix.bin").read_bytes() == (tmp_path / "b/cost_matrix.bin").read_bytes()


def test_identity_instance_gives_diagonal_plan_file(tmp_path):
    cfg = variant(system={"horizon": 3, "A": [[1, 0], [0, 1]], "B": [[1, 0], [0, 1]]},
                  cost={"type": "min_energy"}, target=SMALL["source"])
    path = write_config(tmp_path, cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
    pi, meta = io.read_plan(tmp_path / "plan.csv")
    assert np.count_nonzero(pi - np.diag(np.diag(pi))) == 0
    assert float(meta["objective"]) == pytest.approx(0.0, abs=1e-15)


def test_zero_samples_writes_vacuous_outputs(tmp_path):
    cfg = variant(sampling={"mode": "monte_carlo", "count": 0, "seed": 0, "timesteps": [0, 2, 3]})
    path = write_config(tmp_path, cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
    hists = sorted(p.name for p in (tmp_path / "sim").glob("hist_*.csv"))
    assert hists == ["hist_t00.csv"]
    _, cols, rows = io.read_table(tmp_path / "sim/trajectories.csv")
    assert cols == ["id", "step", "z1", "z2", "u1"] and rows.shape[0] == 0


def test_outputs_carry_config_hash(tmp_path):
    path = write_config(tmp_path, SMALL)
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
    exp = load_config(path)
    assert io.read_header(tmp_path / "plan.csv")["config_hash"] == exp.solve_hash
    for name in ("assignments.csv", "trajectories.csv", "hist_t00.csv", "hist_t03.csv"):
        assert io.read_header(tmp_path / "sim" / name)["config_hash"] == exp.config_hash
    assert exp.config_hash.encode() in (tmp_path / "heatmaps/hist_t03.pgm").read_bytes()


def test_stale_artifacts_are_rejected(tmp_path, capsys):
    path = write_config(tmp_path, SMALL)
    out = str(tmp_path / "o")
    assert main(["simulate", "--config", path, "--out", out]) == 3
    assert main(["solve", "--config", path, "--out", out]) == 3
    assert main(["cost", "--config", path, "--out", out]) == 0
    other = write_config(tmp_path, variant(target=SMALL["source"]), "other.yaml")
    assert main(["solve", "--config", other, "--out", out]) == 3
    assert main(["solve", "--config", path, "--out", out]) == 0
    # switching the solver invalidates the plan but not the cost matrix
    assert main(["simulate", "--config", path, "--out", out, "--solver", "entropic"]) == 3
    assert main(["simulate", "--config", path, "--out", out, "--seed", "11"]) == 0
    assert "provenance error" in capsys.readouterr().err


def test_verify_passes_on_fresh_run(tmp_path, capsys):
    path = write_config(tmp_path, SMALL)
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    assert main(["verify", "--config", path, "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(ln.startswith("PASS") for ln in lines)


def test_verify_detects_tampered_plan(tmp_path, capsys):
    path = write_config(tmp_path, SMALL)
    main(["run", "--config", path, "--out", str(tmp_path)])
    plan = tmp_path / "plan.csv"
    text = plan.read_text().splitlines()
    i, j, w = text[-1].split(",")
    text[-1] = f"{i},{j},{float(w) * 1.5!r}"
    plan.write_text("\n".join(text) + "\n")
    assert main(["verify", "--config", path, "--out", str(tmp_path)]) == 4
    assert "FAIL  plan marginals" in capsys.readouterr().out


def test_entropic_solver_runs(tmp_path):
    path = write_config(tmp_path, SMALL)
    assert main(["run", "--config", path, "--out", str(tmp_path), "--solver", "entropic"]) == 0
    assert io.read_header(tmp_path / "plan.csv")["method"] == "entropic"


def test_lattice_mode_writes_assignments(tmp_path):
    cfg = variant(sampling={"mode": "lattice", "agents": [3, 2], "timesteps": [3]})
    path = write_config(tmp_path, cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
    _, cols, rows = io.read_table(tmp_path / "sim/assignments.csv")
    assert cols == ["id", "x1", "x2", "y1", "y2", "cost"] and rows.shape == (6, 6)


def test_builtin_configs_load():
    a, b = load_config("lqr2d"), load_config("swarm-logo")
    assert a.grid.counts == b.grid.counts == (35, 35)
    assert a.source.mass.size == 1225
    assert np.count_nonzero(b.target.mass) > 100
    assert load_config("lqr2d", seed=5).config_hash != a.config_hash
    assert load_config("lqr2d", seed=5).problem_hash == a.problem_hash


def test_pgm_roundtrip(tmp_path):
    img = np.arange(12, dtype=float).reshape(3, 4)
    io.write_pgm(tmp_path / "x.pgm", img, comment="test")
    back = io.read_pgm(tmp_path / "x.pgm")
    np.testing.assert_allclose(back, np.round(img / 11 * 255))
    (tmp_path / "p2.pgm").write_text("P2\n# c\n2 2\n9\n0 9\n3 4\n")
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "p2.pgm"), [[0, 9], [3, 4]])


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "otsteer.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("cost", "solve", "simulate", "run", "verify"):
        assert sub in res.stdout
