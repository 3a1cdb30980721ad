"""Reduced-order (1D-manifold) SPH for the monodomain equation on the network.

One particle per network node.  Neighbour lists come from the branch
topology rather than a spatial search: two particles are neighbours when
they are one or two hops apart along the tree, except for pairs that would
connect two sibling branches through their shared junction node.
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import sparse

from .ep_core import ApState, Stimulus
from .kernels import KernelSpec, w_radial_derivative

log = logging.getLogger(__name__)


def _parents(tree):
    parent = np.full(len(tree), -1, dtype=np.int64)
    for br in tree.branches:
        ids = br.node_ids
        for a, b in zip(ids[:-1], ids[1:]):
            parent[b] = a
    return parent


def topology_pairs(tree):
    """Unordered neighbour pairs ``(i, j)`` with ``i < j`` from the tree topology."""
    if len(tree) < 3:
        raise ValueError("network needs at least 3 nodes to form a neighbour stencil")
    parent = _parents(tree)
    child = np.nonzero(parent >= 0)[0]
    pairs = set()
    for c in child:
        p = parent[c]
        pairs.add((min(c, p), max(c, p)))
        g = parent[p]
        if g >= 0:
            pairs.add((min(c, g), max(c, g)))
    out = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return out[:, 0], out[:, 1]


def neighbor_lists(i, j, n):
    nbrs = [[] for _ in range(n)]
    for a, b in zip(i, j):
        nbrs[a].append(int(b))
        nbrs[b].append(int(a))
    return [sorted(x) for x in nbrs]


def laplacian_matrix(i, j, weight, volume, n):
    """Sparse ``M`` such that ``(M u)_i = sum_j V_j c_ij (u_i - u_j)``.

    ``weight`` holds the symmetric pair coefficient ``c_ij`` per unordered
    pair; ``volume`` the per-particle volume.
    """
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([weight * volume[j], weight * volume[i]])
    off = sparse.csr_matrix((-vals, (rows, cols)), shape=(n, n))
    diag = np.zeros(n)
    np.add.at(diag, rows, vals)
    return (off + sparse.diags(diag)).tocsr()


@dataclass
class ReducedParticleSet:
    ref_position: np.ndarray
    volume: np.ndarray  # l_seg^3, used where the network couples to the myocardium
    line_volume: np.ndarray  # l_seg, the 1D measure used by the diffusion sum
    state: ApState
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_r: np.ndarray
    pair_dwdr: np.ndarray
    terminal: np.ndarray
    d_iso: float
    Cm: float
    kernel: KernelSpec
    l_seg: float
    matrix: sparse.csr_matrix = None

    def __len__(self):
        return len(self.ref_position)

    @property
    def neighbors(self):
        return neighbor_lists(self.pair_i, self.pair_j, len(self))

    @property
    def terminal_ids(self):
        return np.nonzero(self.terminal)[0]


def particles_from_network(tree, h=None, d_iso=0.1, Cm=1.0) -> ReducedParticleSet:
    l_seg = tree.l_seg
    h = 1.3 * l_seg if h is None else h
    spec = KernelSpec(h, dim=1)
    i, j = topology_pairs(tree)
    pos = tree.positions.copy()
    r = np.linalg.norm(pos[i] - pos[j], axis=1)
    dwdr = w_radial_derivative(r, spec)
    n = len(pos)
    terminal = np.zeros(n, dtype=bool)
    terminal[tree.terminal_node_ids] = True
    vol = np.full(n, l_seg**3)
    line = np.full(n, l_seg)
    coef = 2.0 * d_iso / Cm * dwdr / r
    m = laplacian_matrix(i, j, coef, line, n)
    return ReducedParticleSet(
        pos, vol, line, ApState.resting(n), i, j, r, dwdr, terminal, d_iso, Cm, spec, l_seg, m
    )


def network_diffusion_rate(s: ReducedParticleSet, Vm=None):
    """Per-particle ``dVm/dt`` from network diffusion."""
    Vm = s.state.Vm if Vm is None else Vm
    return s.matrix @ Vm


def stimulate(particle_ids, value=1.0, t_window=(0.0, 0.5)) -> Stimulus:
    """Clamp specification applied after every sub-step inside ``t_window``."""
    ids = np.asarray(particle_ids, dtype=np.int64).reshape(-1)
    if len(ids) == 0:
        log.warning("stimulus has no target particles and will have no effect")
    return Stimulus(ids, value, float(t_window[0]), float(t_window[1]))
