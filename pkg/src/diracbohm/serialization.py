"""CSV, JSON and SVG output.

Every float in CSV files is written with 17 significant digits so that a
file read back reproduces the arrays bit for bit.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .bohm import TrajectorySet
from .fields import PhysicalParams, PolarField, SpatialGrid, WaveField

FMT = "%.17g"


def _header(grid: SpatialGrid, time: float, params: PhysicalParams) -> str:
    return (f"# time={FMT % time} hbar={FMT % params.hbar} mass={FMT % params.mass} "
            f"q_min={FMT % grid.q_min} q_max={FMT % grid.q_max} n_points={grid.n_points}")


def _parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise ValueError("missing '# time=... hbar=... mass=...' header")
    out = {}
    for item in line[1:].split():
        key, _, val = item.partition("=")
        out[key] = val
    return out


def write_wavefield(path, psi: WaveField) -> Path:
    path = Path(path)
    data = np.column_stack([psi.grid.q, psi.values.real, psi.values.imag])
    np.savetxt(path, data, fmt=FMT, delimiter=",", comments="",
               header=_header(psi.grid, psi.time, psi.params) + "\nq,re_psi,im_psi")
    return path


def read_wavefield(path) -> WaveField:
    path = Path(path)
    with path.open() as fh:
        meta = _parse_header(fh.readline())
        cols = fh.readline().strip().split(",")
        if cols != ["q", "re_psi", "im_psi"]:
            raise ValueError(f"{path}: expected columns q,re_psi,im_psi")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = SpatialGrid(float(meta["q_min"]), float(meta["q_max"]), int(meta["n_points"]))
    params = PhysicalParams(float(meta["hbar"]), float(meta["mass"]))
    return WaveField(grid, float(meta["time"]), data[:, 1] + 1j * data[:, 2], params)


def write_polar(path, polar: PolarField) -> Path:
    path = Path(path)
    rows = [_header(polar.grid, polar.time, polar.params), "q,R,S,node_mask"]
    for q, r, s, m in zip(polar.grid.q, polar.R, polar.S, polar.node_mask):
        rows.append(f"{FMT % q},{FMT % r},{FMT % s},{int(m)}")
    path.write_text("\n".join(rows) + "\n")
    return path


def write_table(path, header: list[str], columns: list[np.ndarray]) -> Path:
    """Plain CSV with a column header; NaN is written as ``nan``."""
    path = Path(path)
    data = np.column_stack([np.asarray(c, float) for c in columns]) if columns else np.empty((0, 0))
    np.savetxt(path, data, fmt=FMT, delimiter=",", comments="", header=",".join(header))
    return path


def write_trajectories(path, traj: TrajectorySet, prefix: str = "q") -> Path:
    names = ["time"] + [f"{prefix}_{i + 1}" for i in range(traj.n_traj)]
    return write_table(path, names, [traj.times, *traj.positions])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
    return path


# ------------------------------------------------------------------------- svg

def emit_svg_trajectories(traj: TrajectorySet | None, density_background: list[WaveField],
                          width: int = 720, height: int = 480, max_columns: int = 200,
                          max_rows: int = 200, max_points: int = 400) -> str:
    """Trajectory polylines (time across, q up) over a grayscale density backdrop."""
    if not density_background:
        raise ValueError("need at least one density snapshot for the backdrop")
    grid = density_background[0].grid
    t0, t1 = density_background[0].time, density_background[-1].time
    if traj is not None and traj.n_traj:
        t0, t1 = min(t0, float(traj.times[0])), max(t1, float(traj.times[-1]))
    if t1 <= t0:
        t1 = t0 + 1.0
    q0, q1 = grid.q_min, grid.q_max
    left, right, top, bottom = 60, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(t):
        return left + (t - t0) / (t1 - t0) * pw

    def sy(q):
        return top + (q1 - q) / (q1 - q0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']

    cols = np.unique(np.linspace(0, len(density_background) - 1, min(max_columns, len(density_background))).astype(int))
    n_rows = min(max_rows, grid.n_points)
    per = grid.n_points // n_rows
    dens = np.array([density_background[i].density[: n_rows * per].reshape(n_rows, per).mean(axis=1) for i in cols])
    peak = dens.max() if dens.size and dens.max() > 0 else 1.0
    cw = pw / len(cols)
    rh = ph / n_rows
    out.append('<g shape-rendering="crispEdges">')
    for ci, row in enumerate(dens):
        for ri, d in enumerate(row):
            shade = int(round(255 * (1 - d / peak)))
            if shade >= 255:
                continue
            y = top + (n_rows - 1 - ri) * rh
            out.append(f'<rect x="{left + ci * cw:.3f}" y="{y:.3f}" width="{cw:.3f}" height="{rh:.3f}" '
                       f'fill="rgb({shade},{shade},{shade})"/>')
    out.append("</g>")

    if traj is not None and traj.n_traj:
        step = max(1, -(-len(traj.times) // max_points))
        idx = np.unique(np.r_[np.arange(0, len(traj.times), step), len(traj.times) - 1])
        out.append('<g fill="none" stroke="#c0392b" stroke-width="0.8">')
        for row in traj.positions:
            pts = " ".join(f"{sx(traj.times[k]):.3f},{sy(row[k]):.3f}" for k in idx if np.isfinite(row[k]))
            out.append(f'<polyline points="{pts}"/>')
        out.append("</g>")

    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left}" y="{height - 28}" font-size="12">{t0:.6g}</text>')
    out.append(f'<text x="{left + pw}" y="{height - 28}" font-size="12" text-anchor="end">{t1:.6g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" font-size="12" text-anchor="middle">time</text>')
    out.append(f'<text x="{left - 6}" y="{top + 12}" font-size="12" text-anchor="end">{q1:.6g}</text>')
    out.append(f'<text x="{left - 6}" y="{top + ph}" font-size="12" text-anchor="end">{q0:.6g}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2})">q</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
