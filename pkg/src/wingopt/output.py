"""File outputs: history CSV, legacy-VTK snapshots, spanwise tables and the summary."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

HISTORY_COLUMNS = ("iter", "objective", "g1", "g2", "g3", "beta", "payload_N", "seconds")


def _vtk_header(title, binary=True):
    return f"# vtk DataFile Version 3.0\n{title}\n{'BINARY' if binary else 'ASCII'}\n"


def write_fields_vtk(path, grid, arrays: dict, iteration=0, beta=0.0):
    """Structured-points snapshot with per-element (cell) scalars, big-endian float32."""
    nx, ny, nz = grid.shape
    title = (f"wingopt fields iter={iteration} beta={beta:g} h={grid.h:g} "
             f"cells={nx}x{ny}x{nz} origin={','.join(f'{v:g}' for v in grid.origin)}")
    with open(path, "wb") as fh:
        fh.write(_vtk_header(title).encode())
        fh.write(f"DATASET STRUCTURED_POINTS\nDIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n"
                 f"ORIGIN {grid.origin[0]:.9g} {grid.origin[1]:.9g} {grid.origin[2]:.9g}\n"
                 f"SPACING {grid.h:.9g} {grid.h:.9g} {grid.h:.9g}\n"
                 f"CELL_DATA {grid.n_el}\n".encode())
        for name, values in arrays.items():
            values = np.asarray(values)
            if values.shape != (grid.n_el,):
                raise ValueError(f"field {name!r} does not match the grid")
            fh.write(f"SCALARS {name} float 1\nLOOKUP_TABLE default\n".encode())
            fh.write(values.astype(">f4").tobytes())
            fh.write(b"\n")


def write_wing_vtk(path, mesh, cell_data: dict, iteration=0):
    """Surface panels as polydata quads with per-panel scalars (e.g. Cp per load case)."""
    quads = mesh.quads
    with open(path, "wb") as fh:
        fh.write(_vtk_header(f"wingopt wing iter={iteration} panels={len(quads)}").encode())
        fh.write(f"DATASET POLYDATA\nPOINTS {len(mesh.nodes)} float\n".encode())
        fh.write(mesh.nodes.astype(">f4").tobytes())
        conn = np.column_stack([np.full(len(quads), 4), quads]).astype(">i4")
        fh.write(f"\nPOLYGONS {len(quads)} {conn.size}\n".encode())
        fh.write(conn.tobytes())
        fh.write(f"\nCELL_DATA {len(quads)}\n".encode())
        for name, values in cell_data.items():
            fh.write(f"SCALARS {name} float 1\nLOOKUP_TABLE default\n".encode())
            fh.write(np.asarray(values).astype(">f4").tobytes())
            fh.write(b"\n")


def read_vtk_header(path):
    """First lines of a legacy VTK file up to the first data block (for inspection)."""
    lines = []
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("ascii", errors="replace").rstrip("\n")
            lines.append(line)
            if line.startswith("LOOKUP_TABLE") or line.startswith("POINTS"):
                break
    return lines


def read_fields_vtk(path):
    """Cell scalars of a snapshot written by ``write_fields_vtk`` plus its header lines."""
    data = Path(path).read_bytes()
    pos, header, arrays = 0, [], {}

    def line():
        nonlocal pos
        end = data.index(b"\n", pos)
        out, pos = data[pos:end].decode("ascii"), end + 1
        return out

    while True:
        text = line()
        header.append(text)
        if text.startswith("CELL_DATA"):
            n = int(text.split()[1])
            break
    while pos < len(data):
        text = line()
        if not text:
            continue
        name = text.split()[1]
        line()  # LOOKUP_TABLE
        arrays[name] = np.frombuffer(data, ">f4", n, pos).astype(float)
        pos += 4 * n
    return header, arrays


def span_table(evaluation, half_span):
    """Rows (eta, alpha_deg, chord_m, lift_per_m, drag_per_m) over the structural half."""
    sol = evaluation.solutions[0]
    geom = sol.trefftz
    half = geom.y_mid > 0
    y = geom.y_mid[half]
    wing = evaluation.wing
    ys = wing.spec.span_positions
    twist = np.interp(y, ys, wing.twist)
    chord = np.interp(y, ys, wing.chord)
    order = np.argsort(y)
    return np.column_stack([y / half_span, twist, chord, sol.lift_dist[half],
                            sol.drag_dist[half]])[order]


def write_span_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("eta", "alpha_deg", "chord_m", "lift_per_m", "drag_per_m"))
        for r in rows:
            w.writerow([f"{v:.8g}" for v in r])


class HistoryWriter:
    """Appends one CSV line per iteration, flushed immediately."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(HISTORY_COLUMNS)
        self._fh.flush()

    def append(self, rec):
        self._w.writerow([rec.iteration, f"{rec.objective:.10g}",
                          *(f"{v:.10g}" for v in rec.g), f"{rec.beta:g}",
                          f"{rec.payload:.6g}", f"{rec.seconds:.3f}"])
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_history(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in HISTORY_COLUMNS}


def interior_fraction(fields):
    """Nominal internal material share inside the eroded hull."""
    w = fields.skin.eroded
    total = w.sum()
    return float((w * fields.gamma_x[1]).sum() / total) if total > 0 else 0.0


SUMMARY_COLUMNS = ("cruise_drag_N", "cruise_lift_N", "takeoff_drag_N", "takeoff_lift_N",
                   "structure_weight_N", "interior_volume_fraction")


def summary_row(evaluation):
    cr, to = evaluation.solutions
    return (0.5 * cr.drag, 0.5 * cr.lift, 0.5 * to.drag, 0.5 * to.lift,
            evaluation.weight, interior_fraction(evaluation.fields))


def write_summary(path, rows: dict, extra: dict | None = None):
    """Table-style summary: one line per labelled design (forces per half wing)."""
    width = max(len(k) for k in rows) if rows else 7
    lines = ["# forces refer to one half wing; volume fraction of the nominal internal field",
             f"{'design':<{width}}  " + "  ".join(f"{c:>24}" for c in SUMMARY_COLUMNS)]
    for label, row in rows.items():
        vals = [f"{v:24.6g}" for v in row[:-1]] + [f"{100 * row[-1]:23.2f}%"]
        lines.append(f"{label:<{width}}  " + "  ".join(vals))
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    Path(path).write_text("\n".join(lines) + "\n")
