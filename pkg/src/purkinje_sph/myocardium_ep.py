"""Full-order SPH monodomain operator on myocardium particles.

Conductivity ``D = d_iso I + d_ani f0 (x) f0``.  Pairs are found once in the
reference configuration; the anisotropic Laplacian uses the pair weight

    d_ij = 5/2 e.D_ij.e - 1/2 tr D_ij,    D_ij = (D_i + D_j) / 2,

which is the 3D SPH second-derivative weight for a general tensor and
collapses to ``d_iso`` when ``d_ani = 0``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import sparse

from .cll import pairs_within
from .ep_core import ApState
from .kernels import KernelSpec, w_radial_derivative
from .reduced_sph import laplacian_matrix

log = logging.getLogger(__name__)


def constant_fibers(fiber=(1.0, 0.0, 0.0), sheet=(0.0, 1.0, 0.0)):
    f = np.asarray(fiber, dtype=float)
    s = np.asarray(sheet, dtype=float)
    f = f / np.linalg.norm(f)
    s = s - np.dot(s, f) * f
    s = s / np.linalg.norm(s)

    def rule(points):
        n = len(points)
        return np.tile(f, (n, 1)), np.tile(s, (n, 1))

    return rule


@dataclass
class MyoParticleSet:
    ref_position: np.ndarray
    volume: np.ndarray
    fiber: np.ndarray
    sheet: np.ndarray
    state: ApState
    d_iso: float
    d_ani: float
    Cm: float
    kernel: KernelSpec
    dp: float
    pair_i: np.ndarray = None
    pair_j: np.ndarray = None
    pair_r: np.ndarray = None
    pair_e: np.ndarray = None
    pair_dwdr: np.ndarray = None
    pair_weight: np.ndarray = None
    matrix: sparse.csr_matrix = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ref_position)

    @property
    def trace_D(self):
        return 3.0 * self.d_iso + self.d_ani

    def neighbor_counts(self):
        c = np.zeros(len(self), dtype=np.int64)
        np.add.at(c, self.pair_i, 1)
        np.add.at(c, self.pair_j, 1)
        return c

    def build_neighbors(self):
        i, j, r = pairs_within(self.ref_position, self.kernel.cutoff)
        self.pair_i, self.pair_j, self.pair_r = i, j, r
        self.pair_e = (self.ref_position[j] - self.ref_position[i]) / r[:, None]
        self.pair_dwdr = w_radial_derivative(r, self.kernel)
        self.set_conductivity(self.d_iso, self.d_ani)

    def set_conductivity(self, d_iso, d_ani):
        self.d_iso, self.d_ani = float(d_iso), float(d_ani)
        i, j, e = self.pair_i, self.pair_j, self.pair_e
        if self.d_ani == 0.0:
            d = np.full(len(i), self.d_iso)
        else:
            # e.D_ij.e with D_ij the mean of the end-point tensors
            efi = np.einsum("ij,ij->i", e, self.fiber[i])
            efj = np.einsum("ij,ij->i", e, self.fiber[j])
            ede = self.d_iso + 0.5 * self.d_ani * (efi**2 + efj**2)
            tr = 3.0 * self.d_iso + self.d_ani
            d = 2.5 * ede - 0.5 * tr
            if np.any(d < 0):
                log.warning("d_ani >= 2 d_iso gives negative pair conductivities; "
                            "the diffusion operator may lose monotonicity")
        self.pair_weight = d
        coef = 2.0 / self.Cm * d * self.pair_dwdr / self.pair_r
        self.matrix = laplacian_matrix(i, j, coef, self.volume, len(self))


def lattice_points(lo, hi, dp, inside=None):
    """Cell-centred lattice over the box ``[lo, hi]`` optionally masked by ``inside(points)``."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    counts = np.floor((hi - lo) / dp + 1e-9).astype(int)
    axes = [lo[a] + (np.arange(counts[a]) + 0.5) * dp for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if inside is not None:
        pts = pts[inside(pts)]
    return pts, counts


def build_lattice(extent, dp0, fiber_rule=None, origin=(0.0, 0.0, 0.0), inside=None,
                  d_iso=0.1, d_ani=0.0, Cm=1.0, h_ratio=1.3, build_neighbors=True, min_axis_particles=5) -> MyoParticleSet:
    """Uniform particle lattice of spacing ``dp0`` filling ``origin + [0, extent]``."""
    extent = np.asarray(extent, dtype=float)
    if np.any(extent <= 0):
        raise ValueError("lattice extent must be positive")
    origin = np.asarray(origin, dtype=float)
    pts, counts = lattice_points(origin, origin + extent, dp0, inside)
    if np.any(counts < min_axis_particles):
        raise ValueError(
            f"resolution too coarse: {counts.tolist()} particles per axis, "
            f"need at least {min_axis_particles}"
        )
    if len(pts) == 0:
        raise ValueError("no particles inside the requested region")
    fiber_rule = fiber_rule or constant_fibers()
    f, s = fiber_rule(pts)
    n = len(pts)
    myo = MyoParticleSet(
        pts, np.full(n, dp0**3), f, s, ApState.resting(n), d_iso, d_ani, Cm,
        KernelSpec(h_ratio * dp0, 3), dp0,
    )
    if build_neighbors:
        myo.build_neighbors()
    return myo


def aniso_diffusion_rate(myo: MyoParticleSet, Vm=None):
    Vm = myo.state.Vm if Vm is None else Vm
    return myo.matrix @ Vm


def apply_pmj_flux(rate, flux, Cm=1.0):
    """Add a junction current to a ``dVm/dt`` accumulator in place."""
    rate += np.asarray(flux) / Cm
    return rate
