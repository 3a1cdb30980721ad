"""One-way current injection from network terminals (PMJs) into the myocardium.

For a myocardium particle ``a`` inside the influence sphere (radius 2h) of
terminal network particles ``i``:

    I_a = 2 (d_M + d_P) sum_i V_i (Vm_a - Vm_i) W'(r_ai) / r_ai

with the full-order 3D kernel.  The current is added to ``dVm_a/dt`` as
``I_a / Cm``.
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import sparse

from .cll import CellLinkedList
from .kernels import KernelSpec, w_derivative_over_r, w_radial_derivative

log = logging.getLogger(__name__)


@dataclass
class PmjMap:
    terminal: np.ndarray  # network particle id per pair
    myo: np.ndarray  # myocardium particle id per pair
    r: np.ndarray
    dwdr: np.ndarray
    f_over_r: np.ndarray  # dW/dr / r, finite when a terminal sits on a particle
    kernel: KernelSpec
    n_network: int
    n_myo: int

    def __len__(self):
        return len(self.r)

    def per_terminal(self):
        out = {}
        for t, m in zip(self.terminal, self.myo):
            out.setdefault(int(t), []).append(int(m))
        return out

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("terminal_id,myocardium_id,distance_mm\n")
            for t, m, r in zip(self.terminal, self.myo, self.r):
                fh.write(f"{int(t)},{int(m)},{float(r)!r}\n")


def build_pmj_map(network, myo, h=None) -> PmjMap:
    """Myocardium particles within ``2h`` of every terminal network particle."""
    h = myo.kernel.h if h is None else h
    spec = KernelSpec(h, 3)
    term = network.terminal_ids
    pts = network.ref_position[term]
    cll = CellLinkedList.from_points(myo.ref_position, spec.cutoff)
    t_ids, m_ids = [], []
    for t, p in zip(term, pts):
        lst = np.sort(cll.within(p, spec.cutoff))
        if len(lst) == 0:
            log.warning("terminal particle %d has no myocardium particle within 2h", t)
        t_ids.extend([t] * len(lst))
        m_ids.extend(lst.tolist())
    t_ids = np.asarray(t_ids, dtype=np.int64)
    m_ids = np.asarray(m_ids, dtype=np.int64)
    r = np.linalg.norm(myo.ref_position[m_ids] - network.ref_position[t_ids], axis=1)
    keep = r < spec.cutoff
    t_ids, m_ids, r = t_ids[keep], m_ids[keep], r[keep]
    return PmjMap(t_ids, m_ids, r, w_radial_derivative(r, spec), w_derivative_over_r(r, spec),
                  spec, len(network), len(myo))


def brute_force_pmj_pairs(network, myo, h):
    """All (terminal, myocardium) pairs closer than ``2h``, by exhaustive search."""
    term = network.terminal_ids
    d = np.linalg.norm(
        network.ref_position[term][:, None, :] - myo.ref_position[None, :, :], axis=2
    )
    a, b = np.nonzero(d < 2.0 * h)
    return term[a], b


def pmj_operator(pmj: PmjMap, network_volume, d_iso_M, d_iso_P):
    """Linear form of the flux: ``I = s * Vm_myo - B @ Vm_network``.

    Returns the per-myocardium diagonal ``s`` and the sparse matrix ``B``.
    """
    c = 2.0 * (d_iso_M + d_iso_P) * network_volume[pmj.terminal] * pmj.f_over_r
    s = np.zeros(pmj.n_myo)
    np.add.at(s, pmj.myo, c)
    B = sparse.csr_matrix((c, (pmj.myo, pmj.terminal)), shape=(pmj.n_myo, pmj.n_network))
    return s, B


def pmj_flux(pmj: PmjMap, network_Vm, myo_Vm, d_iso_M, d_iso_P, network_volume):
    """Per-myocardium-particle junction current ``I^{M:P}``."""
    diff = myo_Vm[pmj.myo] - network_Vm[pmj.terminal]
    c = 2.0 * (d_iso_M + d_iso_P) * network_volume[pmj.terminal] * diff * pmj.f_over_r
    out = np.zeros(pmj.n_myo)
    np.add.at(out, pmj.myo, c)
    return out
