"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (see the ``verdict`` fixture) listing
its sub-checks with the measured values, then asserts them all.
"""

import logging
import time

import numpy as np
import pytest
from scipy import integrate
from scipy.spatial.transform import Rotation

from purkinje_sph.cll import CellLinkedList, brute_force_pairs, pairs_within
from purkinje_sph.config import builtin
from purkinje_sph.coupling import brute_force_pmj_pairs, build_pmj_map
from purkinje_sph.ep_core import AP_FIBER, g_gate, i_ion
from purkinje_sph.geometry import icosphere, level_set_from_mesh, parse_mesh, stl_binary_bytes
from purkinje_sph.kernels import KernelSpec, w_value
from purkinje_sph.mechanics import HoParams, SolidMechanics, passive_stress, strain_energy
from purkinje_sph.myocardium_ep import aniso_diffusion_rate, build_lattice, constant_fibers
from purkinje_sph.netgen import GrowthParams, NetworkTree, grow_network, polyline
from purkinje_sph.reduced_sph import network_diffusion_rate, particles_from_network
from purkinje_sph.scenarios import build

pytestmark = pytest.mark.slow

# Conduction velocity (mm/ms) of the fibre problem from the explicit
# finite-difference model below at dx = 0.025 mm; dx = 0.1 / 0.05 / 0.025 give
# 0.4364 / 0.4402 / 0.4412, so the frozen value is converged to about 0.1%.
CV_ORACLE = 0.4412


def fd_conduction_velocity(dx, d=0.1, p=AP_FIBER, length=20.0, x_fit=(5.0, 15.0)):
    """Plane-wave speed of the 1D monodomain cable by explicit finite differences.

    Second-order central Laplacian with mirrored (no-flux) ends, forward Euler
    in time at ``dt = 0.1 dx^2 / d``; the left 0.4 mm are clamped to Vm = 1
    for 0.5 ms.  The speed is the inverse slope of a least-squares line
    through the activation times (Vm = 0.5 crossings) on ``x_fit``.
    """
    n = int(round(length / dx)) + 1
    x = np.arange(n) * dx
    dt = 0.1 * dx * dx / d
    V = np.zeros(n)
    w = np.zeros(n)
    act = np.full(n, np.inf)
    stim = x <= 0.4
    far = np.searchsorted(x, x_fit[1])
    lap = np.empty(n)
    t = 0.0
    while not np.isfinite(act[far]):
        if t <= 0.5:
            V[stim] = 1.0
        lap[1:-1] = V[2:] - 2.0 * V[1:-1] + V[:-2]
        lap[0] = 2.0 * (V[1] - V[0])
        lap[-1] = 2.0 * (V[-2] - V[-1])
        Vn = V + dt * (d * lap / (dx * dx) + i_ion(V, w, p) / p.Cm)
        w = w + dt * g_gate(V, w, p)
        up = (V < 0.5) & (Vn >= 0.5) & ~np.isfinite(act)
        act[up] = t + dt * (0.5 - V[up]) / (Vn[up] - V[up])
        V = Vn
        t += dt
    sel = (x >= x_fit[0]) & (x <= x_fit[1])
    return 1.0 / np.polyfit(x[sel], act[sel], 1)[0]


def speed_from_activation(x, act, lo, hi):
    sel = (x >= lo) & (x <= hi) & np.isfinite(act)
    return 1.0 / np.polyfit(x[sel], act[sel], 1)[0]


def crossing_time(t, v, threshold=0.5):
    k = int(np.argmax(v >= threshold))
    if v[k] < threshold:
        return np.inf
    if k == 0:
        return float(t[0])
    return float(t[k - 1] + (threshold - v[k - 1]) / (v[k] - v[k - 1]) * (t[k] - t[k - 1]))


def aligned_ncc(t, a, b, search=20.0):
    """Largest normalised cross-correlation of ``a`` and ``b`` over time shifts.

    The shift that overlays the two upstrokes is refined within ``search`` ms;
    the correlation is taken on the overlapping part of the traces.
    """
    step = t[1] - t[0]
    base = int(round((crossing_time(t, a) - crossing_time(t, b)) / step))
    best, lag_best = -1.0, 0
    for lag in range(base - int(search / step), base + int(search / step) + 1):
        if lag >= 0:
            x, y = a[lag:], b[: len(b) - lag]
        else:
            x, y = a[: len(a) + lag], b[-lag:]
        if len(x) < 20:
            continue
        x = x - x.mean()
        y = y - y.mean()
        den = np.sqrt(np.sum(x * x) * np.sum(y * y))
        if den > 0:
            r = float(np.sum(x * y) / den)
            if r > best:
                best, lag_best = r, lag
    return best, lag_best * step


def fmt(x, digits=4):
    return f"{x:.{digits}g}"


# ------------------------------------------------------------------ runs

def run_scenario(name, t_end=None, multirate=True, snapshot_at=None):
    cfg = builtin(name)
    start = time.perf_counter()
    built = build(cfg)
    sim = built.sim
    marks = {}

    def on_snapshot(snap):
        marks["wall"] = time.perf_counter() - run_start
        marks["Vm"] = snap["myocardium"].Vm.copy()

    run_start = time.perf_counter()
    result = sim.run(t_end or cfg.scenario.t_end, multirate=multirate,
                     record_every=cfg.scenario.record_every,
                     snapshot_times=() if snapshot_at is None else (snapshot_at,),
                     on_snapshot=on_snapshot)
    end = time.perf_counter()
    return {
        "cfg": cfg, "built": built, "sim": sim, "result": result,
        "run_wall": end - run_start, "total_wall": end - start, "snapshot": marks,
    }


@pytest.fixture(scope="session")
def cuboid_full():
    return run_scenario("cuboid", snapshot_at=100.0)


@pytest.fixture(scope="session")
def cuboid_half():
    return run_scenario("cuboid-half")


# ------------------------------------------------------------- criteria


def test_criterion_1_fiber(verdict):
    start = time.perf_counter()
    run = run_scenario("fiber")
    runtime = time.perf_counter() - start
    r = run["result"]
    t = r.times
    vm = r.probes["right"][0]
    peak = int(np.argmax(vm))

    # waveform phases of the right-end probe
    up = crossing_time(t, vm, 0.1), crossing_time(t, vm, 0.8)
    upstroke_ms = up[1] - up[0]
    # plateau: the potential stays near its peak for much longer than the upstroke
    plateau_ms = np.count_nonzero(vm[peak:] >= 0.7 * vm[peak]) * (t[1] - t[0])
    after = vm[peak:]
    first_low = peak + int(np.argmax(after < 0.7 * vm[peak]))
    tail = vm[first_low:]
    rises = np.diff(tail)
    monotone = bool(np.all(rises <= 1e-6))
    returned = abs(vm[-1]) < 0.05

    net = run["sim"].network
    x = net.ref_position[:, 0]
    cv = speed_from_activation(x, r.activation["network"], 5.0, 15.0)
    cv_err = abs(cv / CV_ORACLE - 1.0)
    ok = verdict("criterion 1 fiber", {
        "(a) right Vm max > 0.8": (vm.max() > 0.8, fmt(vm.max())),
        "(b) upstroke-plateau-monotone repolarisation, |Vm_end| < 0.05": (
            plateau_ms >= 10.0 * upstroke_ms and monotone and returned,
            f"upstroke {fmt(upstroke_ms, 3)} ms, plateau {fmt(plateau_ms, 3)} ms, "
            f"max rise after plateau {fmt(max(rises.max(), 0.0), 2)}, Vm_end {fmt(vm[-1], 3)}"),
        "(c) CV within 10% of FD oracle": (
            cv_err < 0.10, f"{fmt(cv)} vs {CV_ORACLE} mm/ms, {100 * cv_err:.1f}%"),
        "runtime < 30 s": (runtime < 30.0, f"{runtime:.1f} s"),
    })
    assert ok


def test_criterion_1_oracle_is_reproducible():
    """The frozen speed matches a fresh finite-difference run."""
    assert fd_conduction_velocity(0.025) == pytest.approx(CV_ORACLE, rel=1e-3)


def _cuboid_checks(run, tol):
    sim, r = run["sim"], run["result"]
    myo = sim.myo
    act = r.activation["myocardium"]
    pos = myo.ref_position
    y_top = pos[:, 1].max()
    z_row = pos[np.argmin(np.abs(pos[:, 2] - 10.0)), 2]
    row = np.nonzero((np.abs(pos[:, 1] - y_top) < 1e-9) & (np.abs(pos[:, 2] - z_row) < 1e-9))[0]
    row = row[np.argsort(pos[row, 0])]
    x, a = pos[row, 0], act[row]

    def local_min(lo, hi):
        sel = (x >= lo) & (x <= hi)
        return x[sel][np.argmin(a[sel])]

    x1, x2 = local_min(15.0, 26.0), local_min(34.0, 45.0)
    between = (x > x1) & (x < x2) & np.isfinite(a)
    x_meet = x[between][np.argmax(a[between])] if np.any(between) else np.nan
    rising = np.all(np.diff(a[(x >= x1) & (x <= x_meet)]) >= -1e-9) and np.all(
        np.diff(a[(x >= x_meet) & (x <= x2)]) <= 1e-9)
    p1 = next(p for p in sim.probes if p.name == "P1")
    t_p1 = act[p1.index]
    t_err = abs(t_p1 / 70.0 - 1.0)
    ncc, lag = aligned_ncc(r.times, r.probes["P1"][0], r.probes["T1_network"][0])
    name = run["cfg"].scenario.name
    return {
        f"{name} (a) fronts start at the PMJs": (
            abs(x1 - 20.5) <= 1.0 and abs(x2 - 39.5) <= 1.0,
            f"earliest row activation at x = {fmt(x1, 3)} and {fmt(x2, 3)} mm"),
        f"{name} (a) fronts collide at P1": (
            abs(x_meet - 30.0) <= 1.0 and bool(rising), f"latest at x = {fmt(x_meet, 3)} mm"),
        f"{name} (a) collision time 70 ms +-{int(100 * tol)}%": (
            t_err <= tol, f"{fmt(t_p1)} ms, {100 * t_err:.1f}%"),
        f"{name} (b) P1 vs network waveform NCC > 0.95": (
            ncc > 0.95, f"{fmt(ncc)} at lag {fmt(lag, 3)} ms"),
        f"{name} runtime minutes-scale (< 900 s)": (
            run["total_wall"] < 900.0, f"{run['total_wall']:.0f} s"),
    }


def test_criterion_2_cuboid(verdict, cuboid_full, cuboid_half):
    checks = _cuboid_checks(cuboid_full, 0.15)
    checks.update(_cuboid_checks(cuboid_half, 0.25))
    assert verdict("criterion 2 cuboid + generic network", checks)


def test_criterion_3_network_generation(verdict):
    start = time.perf_counter()
    surface = stl_binary_bytes(icosphere(80.0, 4))
    c = time.perf_counter()
    grid = level_set_from_mesh(parse_mesh(surface), 2.5, 4)
    preprocessing = time.perf_counter() - c
    counts, times = [], []
    for iterations in (6, 9, 12):
        params = GrowthParams(n_iterations=iterations, segments=30, l_seg=0.8, alpha0=0.5,
                              repulsion_weight=0.1, seed=1, initial_node=(0.0, 0.0, 79.0),
                              initial_direction=(1.0, 0.0, 0.0))
        best = np.inf
        for _ in range(2):  # best of two repeats damps scheduler noise
            c = time.perf_counter()
            tree = grow_network(grid, params)
            best = min(best, time.perf_counter() - c)
        times.append(best)
        counts.append(len(tree))
    runtime = time.perf_counter() - start
    fractions = [g / (preprocessing + g) for g in times]
    scaling = [(times[k] / times[0]) / (counts[k] / counts[0]) for k in (1, 2)]
    assert verdict("criterion 3 network generation", {
        "nodes >= 2500": (counts[0] >= 2500, "/".join(map(str, counts))),
        "(a) generation < 20% of pipeline": (
            max(fractions) < 0.20,
            f"preprocessing {preprocessing:.1f} s, generation "
            + "/".join(f"{g:.2f}" for g in times) + " s, fractions "
            + "/".join(f"{f:.3f}" for f in fractions)),
        "(b) time ratio <= 1.3 x count ratio": (
            max(scaling) <= 1.3, "normalised ratios " + "/".join(f"{s:.2f}" for s in scaling)),
        "runtime < 60 s": (runtime < 60.0, f"{runtime:.1f} s"),
    })


def test_criterion_4_multirate(verdict, cuboid_full):
    single = run_scenario("cuboid", t_end=100.0, multirate=False)
    multi_vm = cuboid_full["snapshot"]["Vm"]
    diff = float(np.max(np.abs(multi_vm - single["sim"].myo.state.Vm)))
    multi_wall = cuboid_full["snapshot"]["wall"]
    speedup = single["run_wall"] / multi_wall
    dt = cuboid_full["result"].dt
    assert verdict("criterion 4 multirate", {
        "max |Vm_multi - Vm_single| < 1e-3 at t = 100 ms": (diff < 1e-3, fmt(diff, 3)),
        "speedup > 5x": (
            speedup > 5.0,
            f"{speedup:.2f}x ({single['run_wall']:.0f} s / {multi_wall:.0f} s; dt_P "
            f"{fmt(dt.dt_P, 3)} ms, dt_Md {fmt(dt.dt_Md, 3)} ms, {dt.n_network} network "
            f"step(s) per outer step)"),
    })


def test_criterion_5_mechanics(verdict):
    rng = np.random.default_rng(5)
    X, Y = np.eye(3)[:2]
    p = HoParams()

    ref = max(np.abs(passive_stress(np.eye(3), X, Y, HoParams(fiber_tension_only=t))).max()
              for t in (True, False))

    def random_F():
        while True:
            F = np.eye(3) + 0.15 * rng.normal(size=(3, 3))
            if 0.8 <= np.linalg.det(F) <= 1.25:
                return F

    eps = 1e-6
    fd_err = 0.0
    for _ in range(20):
        F = random_F()
        P = passive_stress(F, X, Y, p)
        fd = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                dF = np.zeros((3, 3))
                dF[a, b] = eps
                fd[a, b] = (strain_energy(F + dF, X, Y, p) - strain_energy(F - dF, X, Y, p)) / (
                    2 * eps)
        fd_err = max(fd_err, np.linalg.norm(P - fd) / np.linalg.norm(P))

    obj_err = 0.0
    for k in range(20):
        F = random_F()
        R = Rotation.random(random_state=k).as_matrix()
        P = passive_stress(F, X, Y, p)
        obj_err = max(obj_err, np.abs(passive_stress(R @ F, X, Y, p) - R @ P).max()
                      / max(1.0, np.abs(P).max()))

    myo = build_lattice((1.2, 1.0, 1.0), 0.2)
    mech = SolidMechanics(myo, p, damping=0.5)
    mech.x = myo.ref_position + 0.01 * rng.normal(size=myo.ref_position.shape)
    mech.v = 0.05 * rng.normal(size=mech.v.shape)
    mech.Ta[:] = 0.05
    mech.update_forces()
    scale = np.sum((p.rho * myo.volume)[:, None] * np.abs(mech.v))
    p0 = mech.momentum()
    for _ in range(1000):
        mech.step(mech.stable_dt())
    mom_err = np.abs(mech.momentum() - p0).max() / scale

    assert verdict("criterion 5 mechanics", {
        "(a) |P(I)| <= 1e-12 a": (ref <= 1e-12 * p.a, fmt(ref, 3)),
        "(b) stress vs energy FD < 1e-6": (fd_err < 1e-6, fmt(fd_err, 3)),
        "(c) objectivity to 1e-10": (obj_err <= 1e-10, fmt(obj_err, 3)),
        "(d) momentum over 1000 steps to 1e-8": (mom_err <= 1e-8, fmt(mom_err, 3)),
    })


def _branched_tree(l_seg=0.2):
    stem = polyline([(0, 0, 0), (4, 0, 0)], l_seg)
    b1 = polyline([(4, 0, 0), (7, 2, 0)], l_seg)
    b2 = polyline([(4, 0, 0), (7, -2, 0)], l_seg)
    b3 = polyline([(7, 2, 0), (9, 2, 1)], l_seg)
    b4 = polyline([(7, 2, 0), (9, 3, -1)], l_seg)
    return NetworkTree.from_polylines([stem, b1, b2, b3, b4], [None, 0, 0, 1, 1], l_seg)


def test_criterion_6_conservation(verdict):
    rng = np.random.default_rng(6)
    net = particles_from_network(_branched_tree(), d_iso=0.1)
    myo = build_lattice((2.0, 1.0, 1.2), 0.2, constant_fibers((0.6, 0.8, 0.0), (0.0, 0.0, 1.0)),
                        d_iso=0.1, d_ani=0.15)
    net_err = myo_err = 0.0
    for _ in range(20):
        v = rng.uniform(-1.0, 2.0, len(net))
        rate = network_diffusion_rate(net, v)
        net_err = max(net_err, abs(np.sum(net.volume * rate)) / np.sum(net.volume * np.abs(rate)))
        v = rng.uniform(-1.0, 2.0, len(myo))
        rate = aniso_diffusion_rate(myo, v)
        myo_err = max(myo_err, abs(np.sum(myo.volume * rate)) / np.sum(myo.volume * np.abs(rate)))
    kern_err = {}
    for dim in (1, 3):
        worst = 0.0
        for h in (0.05, 0.26, 1.3):
            spec = KernelSpec(h, dim)
            f = ((lambda r: 2.0 * w_value(r, spec)) if dim == 1
                 else (lambda r: 4.0 * np.pi * r**2 * w_value(r, spec)))
            val, _ = integrate.quad(f, 0.0, 2.0 * h, epsabs=1e-14, epsrel=1e-13)
            worst = max(worst, abs(val - 1.0))
        kern_err[dim] = worst
    assert verdict("criterion 6 conservation", {
        "network sum V rate = 0 to 1e-12": (net_err <= 1e-12, fmt(net_err, 3)),
        "myocardium sum V rate = 0 to 1e-12": (myo_err <= 1e-12, fmt(myo_err, 3)),
        "kernel integral 1D = 1 to 1e-8": (kern_err[1] <= 1e-8, fmt(kern_err[1], 3)),
        "kernel integral 3D = 1 to 1e-8": (kern_err[3] <= 1e-8, fmt(kern_err[3], 3)),
    })


def test_criterion_7_oracle_equivalence(verdict):
    rng = np.random.default_rng(7)
    n = 10_000
    pts = rng.uniform(0.0, 30.0, (n, 3))
    tags = rng.integers(0, 200, n)
    cll = CellLinkedList.from_points(pts, 2.6, tags)
    mismatches = 0
    for _ in range(300):
        q = rng.uniform(-5.0, 35.0, 3)
        ex = set(rng.integers(0, 200, 3).tolist())
        i, d = cll.nearest(q, ex)
        keep = ~np.isin(tags, list(ex))
        dd = np.linalg.norm(pts[keep] - q, axis=1)
        k = int(np.argmin(dd))
        mismatches += (i != int(np.flatnonzero(keep)[k])) or (d != dd[k])

    sub = pts[:4000] / 3.0
    got = {tuple(p) for p in np.column_stack(pairs_within(sub, 1.0))}
    want = {tuple(p) for p in np.column_stack(brute_force_pairs(sub, 1.0))}

    myo = build_lattice((10.0, 6.0, 3.0), 0.3, build_neighbors=False)
    tree = _branched_tree()
    net = particles_from_network(NetworkTree(tree.positions + (0.55, 3.05, 1.45),
                                             tree.directions, tree.normals, tree.branches,
                                             tree.l_seg), d_iso=0.1)
    pmj = build_pmj_map(net, myo)
    bt, bm = brute_force_pmj_pairs(net, myo, myo.kernel.h)
    map_equal = (sorted(zip(pmj.terminal.tolist(), pmj.myo.tolist()))
                 == sorted(zip(bt.tolist(), bm.tolist())))
    r_brute = np.linalg.norm(myo.ref_position[bm] - net.ref_position[bt], axis=1)
    order = np.lexsort((pmj.myo, pmj.terminal))
    border = np.lexsort((bm, bt))
    r_equal = bool(np.array_equal(pmj.r[order], r_brute[border]))
    assert verdict("criterion 7 oracle equivalence", {
        "CLL nearest == brute force (10^4 nodes, 300 queries)": (mismatches == 0,
                                                                 f"{mismatches} mismatches"),
        "CLL pairs == brute force": (got == want, f"{len(got)} vs {len(want)} pairs"),
        "PMJ map == brute force": (map_equal and r_equal and len(myo) <= 10_000,
                                   f"{len(pmj)} pairs over {len(myo)} particles"),
    })


def test_criterion_8_ellipsoid_ordering(verdict, caplog):
    caplog.set_level(logging.ERROR)
    out = {}
    for name in ("lv-healthy", "lv-nonetwork"):
        run = run_scenario(name)
        act = run["result"].activation["myocardium"]
        out[name] = {p.name: float(act[p.index]) for p in run["sim"].probes}
    h, nn = out["lv-healthy"], out["lv-nonetwork"]
    base_h = min(h["base_septum"], h["base_free_wall"])
    base_n = min(nn["base_septum"], nn["base_free_wall"])
    assert verdict("criterion 8 ellipsoid ordering", {
        "with network: apex before base": (
            h["apex"] < base_h, f"apex {fmt(h['apex'], 3)} ms, base {fmt(base_h, 3)} ms"),
        "without network: base before apex": (
            base_n < nn["apex"], f"base {fmt(base_n, 3)} ms, apex {fmt(nn['apex'], 3)} ms"),
    })
