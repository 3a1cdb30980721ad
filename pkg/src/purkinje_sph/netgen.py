"""Fractal Purkinje-network growth on a level-set surface.

Branches are polylines of nodes spaced ``l_seg`` apart.  Every new node is
projected onto the surface and checked for collision against all existing
nodes except those of its own, mother and brother branches.  A child
branch shares its first node with the tip of its mother.
"""

from dataclasses import dataclass, field, asdict
import json
import logging

import numpy as np

from .cll import CellLinkedList

log = logging.getLogger(__name__)


class DegenerateDirectionError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class GrowthParams:
    n_iterations: int = 5
    segments: int = 10
    l_seg: float = 1.0
    alpha0: float = 0.35
    repulsion_weight: float = 0.1
    sigma: float = None
    seed: int = 0
    initial_node: tuple = (0.0, 0.0, 0.0)
    initial_direction: tuple = (1.0, 0.0, 0.0)
    first_branch_segments: int = None
    z_max: float = np.inf  # nodes above this height end their branch

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = 5.0 * self.l_seg
        if self.first_branch_segments is None:
            self.first_branch_segments = self.segments
        if not self.l_seg > 0:
            raise ValueError("l_seg must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.segments < 1 or self.first_branch_segments < 1:
            raise ValueError("a branch needs at least one segment (N >= 2)")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be non-negative")
        d = np.asarray(self.initial_direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("initial_direction must be a unit vector")

    @property
    def cell_size(self):
        return max(2.6 * self.l_seg, self.sigma)


@dataclass
class Branch:
    node_ids: list
    mother: int = None
    children: list = field(default_factory=list)
    terminated_by_collision: bool = False


class NetworkTree:
    """Nodes (position, growth direction, surface normal) and branch topology."""

    def __init__(self, positions, directions, normals, branches, l_seg, node_branch=None):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.directions = np.asarray(directions, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        self.branches = list(branches)
        self.l_seg = float(l_seg)
        if node_branch is None:
            node_branch = np.zeros(len(self.positions), dtype=np.int64)
            for b, br in enumerate(self.branches):
                start = 0 if br.mother is None else 1
                node_branch[br.node_ids[start:]] = b
        self.node_branch = np.asarray(node_branch, dtype=np.int64)

    def __len__(self):
        return len(self.positions)

    @property
    def terminal_node_ids(self):
        return [br.node_ids[-1] for br in self.branches if not br.children and len(br.node_ids) > 1]

    def edges(self):
        out = []
        for br in self.branches:
            out.extend(zip(br.node_ids[:-1], br.node_ids[1:]))
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def from_polylines(cls, polylines, mothers, l_seg):
        """Build a tree from explicit polylines.

        Each child polyline must start at the tip of its mother; that point is
        shared rather than duplicated.
        """
        positions, directions, branches = [], [], []
        for b, (pts, mother) in enumerate(zip(polylines, mothers)):
            pts = np.asarray(pts, dtype=float)
            if mother is None:
                ids = []
                start = 0
            else:
                tip = branches[mother].node_ids[-1]
                if np.linalg.norm(pts[0] - positions[tip]) > 1e-9 * max(1.0, l_seg):
                    raise ValueError(f"branch {b} does not start at the tip of branch {mother}")
                ids = [tip]
                start = 1
                branches[mother].children.append(b)
            for k in range(start, len(pts)):
                seg = pts[k] - pts[k - 1] if k > 0 else pts[1] - pts[0]
                ids.append(len(positions))
                positions.append(pts[k])
                directions.append(seg / np.linalg.norm(seg))
            branches.append(Branch(ids, mother))
        normals = np.zeros((len(positions), 3))
        return cls(positions, directions, normals, branches, l_seg)

    # ------------------------------------------------------------ export

    def export(self, prefix, extra_columns=None):
        """Write ``<prefix>.network.txt`` (nodes + edges) and ``<prefix>.topology.json``."""
        term = np.zeros(len(self), dtype=bool)
        term[self.terminal_node_ids] = True
        names = list(extra_columns or {})
        with open(f"{prefix}.network.txt", "w") as fh:
            fh.write(f"# l_seg {float(self.l_seg)!r}\n")
            fh.write("# nodes: id x y z branch is_terminal" + "".join(" " + n for n in names) + "\n")
            fh.write(f"nodes {len(self)}\n")
            for i, p in enumerate(self.positions):
                extra = "".join(f" {float(extra_columns[n][i])!r}" for n in names)
                x, y, z = (float(v) for v in p)
                fh.write(f"{i} {x!r} {y!r} {z!r} {self.node_branch[i]} {int(term[i])}{extra}\n")
            edges = self.edges()
            fh.write("# edges: id_a id_b\n")
            fh.write(f"edges {len(edges)}\n")
            for a, b in edges:
                fh.write(f"{a} {b}\n")
        topo = {
            "l_seg": self.l_seg,
            "n_nodes": len(self),
            "branches": [
                {"id": b, **asdict(br)} for b, br in enumerate(self.branches)
            ],
            "terminal_node_ids": [int(i) for i in self.terminal_node_ids],
            "directions": self.directions.tolist(),
            "normals": self.normals.tolist(),
        }
        with open(f"{prefix}.topology.json", "w") as fh:
            json.dump(topo, fh, indent=1)

    @classmethod
    def load(cls, prefix):
        with open(f"{prefix}.topology.json") as fh:
            topo = json.load(fh)
        positions, node_branch = [], []
        with open(f"{prefix}.network.txt") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        n = int(lines[0].split()[1])
        for ln in lines[1 : n + 1]:
            parts = ln.split()
            positions.append([float(x) for x in parts[1:4]])
            node_branch.append(int(parts[4]))
        branches = [
            Branch(b["node_ids"], b["mother"], b["children"], b["terminated_by_collision"])
            for b in topo["branches"]
        ]
        return cls(positions, topo["directions"], topo["normals"], branches, topo["l_seg"], node_branch)


# ---------------------------------------------------------------- growth rules

def child_direction(d0, n0, alpha, w, d_grad):
    """Rotate ``d0`` by ``alpha`` about the surface normal and add repulsion."""
    d0 = np.asarray(d0, dtype=float)
    v = d0 * np.cos(alpha) + np.cross(d0, n0) * np.sin(alpha) + w * np.asarray(d_grad, dtype=float)
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise DegenerateDirectionError("repulsion cancels the rotated growth direction")
    return v / norm


_STENCIL = np.vstack([np.eye(3), -np.eye(3)])


def distance_gradient(p, cll: CellLinkedList, exclusions, eps):
    """Central-difference gradient of the distance to the nearest eligible node.

    Returns the zero vector when every stored node is excluded.
    """
    p = np.asarray(p, dtype=float)
    d, ids = cll.nearest_distances(p + eps * _STENCIL, exclude=exclusions, center=p)
    if ids[0] < 0:
        return np.zeros(3)
    return (d[:3] - d[3:]) / (2.0 * eps)


def project_node(p, grid, min_gradient=1e-6):
    """One projection step ``p - phi(p) N(p)`` onto the zero level set.

    Where the blended gradient nearly vanishes (a ridge of the distance
    field) the point is returned unchanged and a message is logged.
    """
    p = np.asarray(p, dtype=float)
    phi = grid.interp_phi(p)
    raw = grid._blend(grid.normal, p)
    norm = np.linalg.norm(raw)
    if norm < min_gradient:
        log.info("projection skipped at %s: degenerate level-set normal", p.tolist())
        return p.copy()
    return p - phi * raw / norm


def collision_check(p_new, cll: CellLinkedList, exclusions, sigma):
    """True iff an eligible node lies within ``sigma`` of ``p_new``."""
    return len(cll.within(p_new, sigma, exclude=exclusions)) > 0


def grow_network(grid, params: GrowthParams) -> NetworkTree:
    """Grow the network: a first branch, then two children per growing branch per iteration."""
    rng = np.random.default_rng(params.seed)
    l_seg, sigma, w = params.l_seg, params.sigma, params.repulsion_weight
    cll = CellLinkedList(params.cell_size, capacity=4096)
    positions, directions, normals, node_branch = [], [], [], []
    branches = []

    def add_node(p, d, b):
        positions.append(p)
        directions.append(d)
        normals.append(grid.interp_normal(p))
        node_branch.append(b)
        cll.insert(p, tag=b)
        return len(positions) - 1

    def grow_segments(b, start_id, d_first, n_segments, exclusions):
        """Lay up to ``n_segments`` nodes; returns True if fully grown."""
        br = branches[b]
        prev = positions[start_id]
        d = d_first
        for j in range(n_segments):
            if j > 0:
                g = distance_gradient(prev, cll, exclusions, l_seg)
                v = d + w * g
                nv = np.linalg.norm(v)
                d = v / nv if nv > 1e-12 else d
            p = project_node(prev + l_seg * d, grid)
            if p[2] > params.z_max:
                return False
            if collision_check(p, cll, exclusions, sigma):
                br.terminated_by_collision = True
                return False
            seg = p - prev
            slen = np.linalg.norm(seg)
            if slen < 1e-9 * l_seg:
                log.info("branch %d stalled: projection returned to the previous node", b)
                return False
            d = seg / slen
            br.node_ids.append(add_node(p, d, b))
            prev = p
        return True

    d0 = np.asarray(params.initial_direction, dtype=float)
    r0 = project_node(np.asarray(params.initial_node, dtype=float), grid)
    branches.append(Branch([]))
    branches[0].node_ids.append(add_node(r0, d0, 0))
    grow_segments(0, 0, d0, params.first_branch_segments, exclusions={0})
    if len(branches[0].node_ids) < 2:
        raise GenerationError("first branch could not grow from the initial node")

    to_grow = [0]
    for _ in range(params.n_iterations):
        to_grow = [to_grow[i] for i in rng.permutation(len(to_grow))]
        next_grow = []
        for m in to_grow:
            tip = branches[m].node_ids[-1]
            sign = 1.0
            siblings = []
            for _child in range(2):
                alpha = sign * params.alpha0 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0))
                sign = -sign
                b = len(branches)
                branches.append(Branch([tip], mother=m))
                exclusions = {m, b, *siblings}
                g = distance_gradient(positions[tip], cll, exclusions, l_seg)
                try:
                    d1 = child_direction(directions[tip], normals[tip], alpha, w, g)
                except DegenerateDirectionError:
                    d1 = child_direction(directions[tip], normals[tip], 1.01 * alpha, w, g)
                grown = grow_segments(b, tip, d1, params.segments, exclusions)
                if len(branches[b].node_ids) < 2:
                    # the very first node collided: nothing to keep
                    branches.pop()
                    continue
                branches[m].children.append(b)
                siblings.append(b)
                if grown:
                    next_grow.append(b)
        to_grow = next_grow

    return NetworkTree(positions, directions, normals, branches, l_seg, node_branch)


def straight_network(start, direction, n_nodes, l_seg) -> NetworkTree:
    """A single straight branch of ``n_nodes`` nodes."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    pts = np.asarray(start, dtype=float) + np.arange(n_nodes)[:, None] * l_seg * d
    return NetworkTree.from_polylines([pts], [None], l_seg)


def polyline(points, l_seg):
    """Resample a piecewise-linear path into equally spaced nodes (spacing close to ``l_seg``)."""
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(1, int(round(s[-1] / l_seg)))
    t = np.linspace(0.0, s[-1], n + 1)
    return np.stack([np.interp(t, s, points[:, a]) for a in range(3)], axis=1)
