"""Artifact files: cost matrices, plans, densities, CSV tables and graymaps.

Every text artifact starts with ``# key=value`` header lines so a file can
be traced back to the configuration that produced it.  Floats are written
with 17 significant digits, which round-trips float64 exactly and keeps
repeated runs byte-identical.
"""

import json
from pathlib import Path

import numpy as np

COST_MAGIC = b"OTSTEER-COST-1\n"
FLOAT_FMT = "%.17g"


def _header_lines(meta):
    return "".join(f"# {k}={meta[k]}\n" for k in sorted(meta))


def read_header(path):
    """``# key=value`` lines at the top of a text artifact, as a dict."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            meta[key] = value
    return meta


def write_table(path, columns, rows, meta, fmt=FLOAT_FMT):
    """CSV with a metadata header, one column-name line, then ``rows``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    if isinstance(fmt, str):
        fmt = [fmt] * len(columns)
    with open(path, "w", newline="\n") as fh:
        fh.write(_header_lines(meta))
        fh.write(",".join(columns) + "\n")
        if rows.shape[0]:
            np.savetxt(fh, rows, fmt=fmt, delimiter=",")


def read_table(path):
    """Return ``(meta, columns, rows)`` for a file written by :func:`write_table`."""
    meta = read_header(path)
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("# ")]
    columns = lines[0].strip().split(",")
    if len(lines) == 1:
        return meta, columns, np.zeros((0, len(columns)))
    rows = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return meta, columns, rows


def write_cost_matrix(path, C, meta):
    """Dense cost matrix: magic line, JSON header line, raw little-endian float64.

    A ``.csv`` suffix writes a text table instead (header lines carry the
    same metadata).
    """
    C = np.asarray(C, dtype=float)
    meta = dict(meta, rows=C.shape[0], cols=C.shape[1])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        write_table(path, [f"c{j}" for j in range(C.shape[1])], C, meta)
        return
    with open(path, "wb") as fh:
        fh.write(COST_MAGIC)
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        fh.write(C.astype("<f8").tobytes())


def read_cost_matrix(path):
    path = Path(path)
    if path.suffix == ".csv":
        meta, _, rows = read_table(path)
        return rows, meta
    with open(path, "rb") as fh:
        if fh.readline() != COST_MAGIC:
            raise ValueError(f"{path} is not a cost-matrix file")
        meta = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(meta["rows"], meta["cols"]).copy(), meta


def write_plan(path, plan, meta):
    """Sparse coupling as ``i,j,mass`` triplets."""
    i, j, w = plan.support()
    meta = dict(meta, n_x=plan.pi.shape[0], n_y=plan.pi.shape[1],
                objective=repr(plan.objective), method=plan.method)
    write_table(path, ["i", "j", "mass"], np.column_stack([i, j, w]), meta,
                fmt=["%d", "%d", FLOAT_FMT])


def read_plan(path):
    """Dense coupling matrix and header of a triplet file."""
    meta, _, rows = read_table(path)
    pi = np.zeros((int(meta["n_x"]), int(meta["n_y"])))
    if rows.shape[0]:
        pi[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
    return pi, meta


def write_density(path, density, meta):
    n = density.grid.ndim
    cols = [f"x{d + 1}" for d in range(n)] + ["mass"]
    write_table(path, cols, np.column_stack([density.cells, density.mass]), meta)


def read_pgm(path):
    """Grayscale matrix from a plain (P2) or binary (P5) portable graymap."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == "P5":
        dtype = ">u2" if maxval > 255 else "u1"
        img = np.frombuffer(data[pos + 1:], dtype=dtype, count=w * h)
    elif magic == "P2":
        img = np.array(data[pos:].split(), dtype=float)[: w * h]
    else:
        raise ValueError(f"{path}: unsupported graymap type {magic}")
    return img.reshape(h, w).astype(float)


def write_pgm(path, image, comment=""):
    """8-bit binary graymap, linearly scaled so the maximum maps to white."""
    img = np.asarray(image, dtype=float)
    hi = img.max() if img.size else 0.0
    lo = min(img.min(), 0.0) if img.size else 0.0
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = f"P5\n# {comment}\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    path.write_bytes(head + pixels.tobytes())
