"""Assemble a runnable :class:`Simulation` from a :class:`SimConfig`."""

from dataclasses import dataclass, field, asdict
import logging
import time

import numpy as np

from .config import SimConfig
from .coupling import build_pmj_map
from .ep_core import ApParams, Stimulus
from .geometry import ellipsoid_mesh, level_set_from_mesh, parse_mesh
from .mechanics import ActiveParams, HoParams, SolidMechanics
from .myocardium_ep import build_lattice, constant_fibers
from .netgen import GrowthParams, NetworkTree, grow_network, polyline, straight_network
from .reduced_sph import particles_from_network
from .timeloop import Probe, Simulation

log = logging.getLogger(__name__)


@dataclass
class Built:
    sim: Simulation
    tree: NetworkTree = None
    grid: object = None
    wall_clock: dict = field(default_factory=dict)


# ------------------------------------------------------------------ geometry

def ellipsoid_radius(points, axes):
    """Normalised ellipsoidal radius: 1 on the surface with semi-axes ``axes``."""
    a = np.asarray(axes, dtype=float)
    return np.sqrt(np.sum((np.asarray(points) / a) ** 2, axis=-1))


def shell_inside(endo_axes, epi_axes, base_z):
    def inside(p):
        return (
            (ellipsoid_radius(p, endo_axes) >= 1.0)
            & (ellipsoid_radius(p, epi_axes) <= 1.0)
            & (p[:, 2] <= base_z)
        )

    return inside


def transmural_depth(points, endo_axes, epi_axes, iterations=50):
    """Depth ``t`` in [0, 1] such that a point lies on the ellipsoid with axes
    ``endo + t (epi - endo)``; found by bisection (the radius is monotone in t).
    """
    endo = np.asarray(endo_axes, dtype=float)
    epi = np.asarray(epi_axes, dtype=float)
    lo = np.zeros(len(points))
    hi = np.ones(len(points))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        axes = endo + mid[:, None] * (epi - endo)
        outside = np.sqrt(np.sum((points / axes) ** 2, axis=1)) > 1.0
        lo = np.where(outside, mid, lo)
        hi = np.where(outside, hi, mid)
    return 0.5 * (lo + hi)


def helix_fibers(endo_axes, epi_axes, angle_endo_deg=60.0, angle_epi_deg=-60.0):
    """Rule-based fibres: helix angle varying linearly across the wall, sheet transmural."""
    endo = np.asarray(endo_axes, dtype=float)
    epi = np.asarray(epi_axes, dtype=float)

    def rule(points):
        points = np.asarray(points, dtype=float)
        t = transmural_depth(points, endo, epi)
        axes = endo + t[:, None] * (epi - endo)
        n = points / axes**2
        n /= np.linalg.norm(n, axis=1)[:, None]
        circ = np.cross(np.array([0.0, 0.0, 1.0]), n)
        norm = np.linalg.norm(circ, axis=1)
        circ[norm < 1e-9] = (1.0, 0.0, 0.0)
        norm[norm < 1e-9] = 1.0
        circ /= norm[:, None]
        circ -= np.sum(circ * n, axis=1)[:, None] * n
        circ /= np.linalg.norm(circ, axis=1)[:, None]
        lon = np.cross(n, circ)
        ang = np.radians(angle_endo_deg + t * (angle_epi_deg - angle_endo_deg))
        f = np.cos(ang)[:, None] * circ + np.sin(ang)[:, None] * lon
        return f, n

    return rule


def build_myocardium(cfg: SimConfig):
    g = cfg.geometry
    m = cfg.myocardium
    common = dict(d_iso=m.d_iso, d_ani=m.d_ani, Cm=cfg.ap_myocardium.Cm, h_ratio=g.h_ratio,
                  min_axis_particles=g.min_axis_particles)
    if g.kind == "box":
        rule = constant_fibers(g.fiber, g.sheet)
        return build_lattice(g.extent, g.dp0, rule, g.origin, **common)
    if g.kind == "ellipsoid_shell":
        epi = np.asarray(g.epi_axes)
        lo = np.array([-epi[0], -epi[1], -epi[2]])
        hi = np.array([epi[0], epi[1], g.base_z])
        if g.fiber_rule == "helix":
            rule = helix_fibers(g.endo_axes, g.epi_axes, g.helix_endo_deg, g.helix_epi_deg)
        else:
            rule = constant_fibers(g.fiber, g.sheet)
        return build_lattice(hi - lo, g.dp0, rule, lo,
                             inside=shell_inside(g.endo_axes, g.epi_axes, g.base_z), **common)
    raise ValueError(f"geometry.kind {g.kind!r} has no myocardium")


# ------------------------------------------------------------------- network

def growth_params(cfg: SimConfig) -> GrowthParams:
    n = cfg.network
    return GrowthParams(
        n_iterations=n.n_iterations, segments=n.segments, l_seg=n.l_seg, alpha0=n.alpha0,
        repulsion_weight=n.repulsion_weight, sigma=n.sigma or None, seed=cfg.scenario.seed,
        initial_node=tuple(n.initial_node), initial_direction=tuple(_unit(n.initial_direction)),
        first_branch_segments=n.first_branch_segments or None, z_max=n.z_max,
    )


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def growth_surface(cfg: SimConfig):
    """Triangle soup the network grows on."""
    if cfg.grid.mesh:
        with open(cfg.grid.mesh, "rb") as fh:
            return parse_mesh(fh.read())
    return ellipsoid_mesh(cfg.geometry.endo_axes, cfg.grid.subdivisions)


def generic_network(cfg: SimConfig) -> NetworkTree:
    """Stem from the AV node to a junction that splits into two branches ending at T1 and T2."""
    n = cfg.network
    stem = polyline([n.av_node, n.junction], n.l_seg)
    b1 = polyline([n.junction, n.terminal_1], n.l_seg)
    b2 = polyline([n.junction, n.terminal_2], n.l_seg)
    return NetworkTree.from_polylines([stem, b1, b2], [None, 0, 0], n.l_seg)


def build_network_tree(cfg: SimConfig, wall=None):
    """Network tree and (for grown networks) the level-set grid it grew on."""
    n = cfg.network
    wall = {} if wall is None else wall
    if n.source == "straight":
        return straight_network(n.start, n.direction, n.n_nodes, n.l_seg), None
    if n.source == "generic":
        return generic_network(cfg), None
    if n.source == "file":
        return NetworkTree.load(n.file), None
    soup = growth_surface(cfg)
    c = time.perf_counter()
    grid = level_set_from_mesh(soup, cfg.grid.spacing or n.l_seg, cfg.grid.padding)
    wall["level_set"] = time.perf_counter() - c
    c = time.perf_counter()
    tree = grow_network(grid, growth_params(cfg))
    wall["network_generation"] = time.perf_counter() - c
    return tree, grid


# ----------------------------------------------------------------- assembly

def _ap(c):
    return ApParams(c.k, c.a, c.b, c.eps0, c.mu1, c.mu2, c.Cm)


def _nearest(points, target):
    return int(np.argmin(np.linalg.norm(points - np.asarray(target), axis=1)))


def build(cfg: SimConfig, tree: NetworkTree = None) -> Built:
    """Build all enabled subsystems; ``tree`` overrides the configured network source."""
    wall = {}
    grid = None
    net = myo = mech = pmj = None
    if cfg.network.enabled:
        if tree is None:
            tree, grid = build_network_tree(cfg, wall)
        c = time.perf_counter()
        net = particles_from_network(tree, cfg.geometry.h_ratio * tree.l_seg, cfg.network.d_iso,
                                     cfg.ap_network.Cm)
        wall["network_setup"] = time.perf_counter() - c
    if cfg.myocardium.enabled and cfg.geometry.kind != "none":
        c = time.perf_counter()
        myo = build_myocardium(cfg)
        wall["myocardium_setup"] = time.perf_counter() - c
    if net is not None and myo is not None:
        c = time.perf_counter()
        pmj = build_pmj_map(net, myo)
        wall["pmj_map"] = time.perf_counter() - c
    if cfg.mechanics.enabled and myo is not None:
        m = cfg.mechanics
        mat = HoParams(m.a, m.b, m.a_f, m.b_f, m.a_s, m.b_s, m.a_fs, m.b_fs, m.lam, m.rho0,
                       m.fiber_tension_only)
        act = ActiveParams(m.ka, m.Vr, m.eps0_act, m.eps_inf, m.eps_neg_inf, m.xi, m.Vm_bar)
        fixed = myo.ref_position[:, 2] > m.fix_above_z
        c = time.perf_counter()
        mech = SolidMechanics(myo, mat, act, m.damping, fixed, m.active_mode, m.Ta_max,
                              m.hourglass)
        wall["mechanics_setup"] = time.perf_counter() - c

    net_stim, myo_stim = [], []
    for name, s in cfg.stimuli.items():
        if s.system == "network":
            if net is None:
                raise ValueError(f"stimulus {name} targets a disabled network")
            if not 0 <= s.node < len(net):
                raise ValueError(f"stimulus {name}: node {s.node} out of range")
            net_stim.append(Stimulus([s.node], s.value, s.t_start, s.t_end))
        else:
            if myo is None:
                raise ValueError(f"stimulus {name} targets a disabled myocardium")
            d = np.linalg.norm(myo.ref_position - np.asarray(s.point), axis=1)
            ids = np.nonzero(d <= s.radius)[0]
            if len(ids) == 0:
                ids = np.array([int(np.argmin(d))])
            myo_stim.append(Stimulus(ids, s.value, s.t_start, s.t_end))

    probes = []
    for name, p in cfg.probes.items():
        target = net if p.system == "network" else myo
        if target is None:
            log.warning("probe %s refers to a disabled subsystem and is skipped", name)
            continue
        idx = p.node if p.node >= 0 else _nearest(target.ref_position, p.point)
        if idx >= len(target):
            raise ValueError(f"probe {name}: index {idx} out of range")
        probes.append(Probe(name, p.system, idx))

    sim = Simulation(
        net, myo, mech, pmj, _ap(cfg.ap_network), _ap(cfg.ap_myocardium), net_stim, myo_stim,
        probes, network_dim=cfg.network.dim,
    )
    return Built(sim, tree, grid, wall)


def config_summary(cfg: SimConfig):
    return asdict(cfg)
