"""Run outputs: probe CSVs, legacy-VTK ASCII point clouds and the run manifest.

Probe CSV (one file per probe)::

    time_ms,Vm,w
    0.0,1.0,0.0
    0.5,0.98,0.0004

VTK point cloud (``POLYDATA``; lines are written for network snapshots)::

    # vtk DataFile Version 3.0
    myocardium t=10.0
    ASCII
    DATASET POLYDATA
    POINTS 2 double
    0.1 0.1 0.1
    0.3 0.1 0.1
    VERTICES 2 4
    1 0
    1 1
    POINT_DATA 2
    SCALARS Vm double 1
    LOOKUP_TABLE default
    0.0
    0.0
"""

import json
import os
import platform

import numpy as np

from . import __version__


def _num(x):
    """Shortest round-tripping text for a float (plain ``repr`` of numpy scalars is not)."""
    return repr(float(x))


def write_probe_csv(path, times, Vm, w):
    with open(path, "w") as fh:
        fh.write("time_ms,Vm,w\n")
        for t, v, g in zip(times, Vm, w):
            fh.write(f"{_num(t)},{_num(v)},{_num(g)}\n")


def read_probe_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def write_probes(out_dir, result):
    paths = {}
    for name, (vm, w) in result.probes.items():
        p = os.path.join(out_dir, f"probe_{name}.csv")
        write_probe_csv(p, result.times, vm, w)
        paths[name] = p
    return paths


def write_vtk_points(path, points, scalars=None, vectors=None, lines=None, title="points"):
    """Legacy ASCII VTK polydata with per-point scalar and vector arrays."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {n} double\n")
        for p in points:
            fh.write(" ".join(map(_num, p)) + "\n")
        if lines is not None and len(lines):
            lines = np.asarray(lines, dtype=np.int64)
            fh.write(f"LINES {len(lines)} {3 * len(lines)}\n")
            for a, b in lines:
                fh.write(f"2 {a} {b}\n")
        else:
            fh.write(f"VERTICES {n} {2 * n}\n")
            for i in range(n):
                fh.write(f"1 {i}\n")
        if scalars or vectors:
            fh.write(f"POINT_DATA {n}\n")
        for name, arr in (scalars or {}).items():
            arr = np.asarray(arr, dtype=float).reshape(-1)
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(repr(float(x)) for x in arr) + "\n")
        for name, arr in (vectors or {}).items():
            arr = np.asarray(arr, dtype=float).reshape(-1, 3)
            fh.write(f"VECTORS {name} double\n")
            for v in arr:
                fh.write(" ".join(map(_num, v)) + "\n")


def read_vtk_points(path):
    """Parse a file written by :func:`write_vtk_points` into (points, arrays)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    i = 0
    points, arrays = None, {}
    while i < len(tokens):
        ln = tokens[i].split()
        if not ln:
            i += 1
            continue
        if ln[0] == "POINTS":
            n = int(ln[1])
            points = np.array([[float(x) for x in tokens[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif ln[0] == "SCALARS":
            arrays[ln[1]] = np.array([float(tokens[i + 2 + k]) for k in range(len(points))])
            i += len(points) + 2
        elif ln[0] == "VECTORS":
            arrays[ln[1]] = np.array(
                [[float(x) for x in tokens[i + 1 + k].split()] for k in range(len(points))]
            )
            i += len(points) + 1
        else:
            i += 1
    return points, arrays


class SnapshotWriter:
    """Callback writing one VTK file per subsystem at every snapshot."""

    def __init__(self, out_dir, sim, tree=None):
        self.out_dir = out_dir
        self.sim = sim
        self.edges = tree.edges() if tree is not None else None
        self.count = 0
        self.files = []

    def __call__(self, snap):
        t = snap["t"]
        k = self.count
        self.count += 1
        if "myocardium" in snap:
            st = snap["myocardium"]
            scalars = {"Vm": st.Vm, "w": st.w}
            vectors = {}
            pos = self.sim.myo.ref_position
            if "displacement" in snap:
                scalars["Ta"] = snap["Ta"]
                scalars["von_mises"] = snap["von_mises"]
                vectors["displacement"] = snap["displacement"]
                pos = pos + snap["displacement"]
            p = os.path.join(self.out_dir, f"myocardium_{k:05d}.vtk")
            write_vtk_points(p, pos, scalars, vectors, title=f"myocardium t={_num(t)}")
            self.files.append(p)
        if "network" in snap:
            st = snap["network"]
            p = os.path.join(self.out_dir, f"network_{k:05d}.vtk")
            write_vtk_points(p, self.sim.network.ref_position, {"Vm": st.Vm, "w": st.w},
                             lines=self.edges, title=f"network t={_num(t)}")
            self.files.append(p)


def write_activation_csv(path, positions, times):
    with open(path, "w") as fh:
        fh.write("id,x,y,z,activation_ms\n")
        for i, (p, t) in enumerate(zip(positions, times)):
            fh.write(f"{i},{_num(p[0])},{_num(p[1])},{_num(p[2])},{_num(t)}\n")


def write_manifest(path, cfg, wall_clock, extra=None):
    manifest = {
        "version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.scenario.seed,
        "scenario": cfg.scenario.name,
        "config": cfg.to_dict(),
        "wall_clock_s": wall_clock,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, default=_json_default)
    return manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(type(o).__name__)
