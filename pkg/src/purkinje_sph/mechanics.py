"""Total-Lagrangian SPH solid mechanics with a Holzapfel-Ogden type material.

Units: kPa, mm, ms.  A density given in kg/mm^3 is converted to the
consistent unit kPa ms^2 / mm^2 by dividing by 1e-6.

Strain energy (per reference volume):

    W = a/(2b) exp[b(I1 - 3)] - a ln J + lam/2 (ln J)^2
        + sum_{i=f,s} a_i/(2 b_i) {exp[b_i (I_ii - 1)^2] - 1}
        + a_fs/(2 b_fs) {exp[b_fs I_fs^2] - 1}
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import sparse

from .kernels import w_value
from .reduced_sph import laplacian_matrix

log = logging.getLogger(__name__)

DENSITY_UNIT = 1e-6  # kg/mm^3 per (kPa ms^2 / mm^2)


class InvertedParticleError(RuntimeError):
    pass


class MaterialBlowupError(FloatingPointError):
    pass


@dataclass(frozen=True)
class HoParams:
    a: float = 0.059
    b: float = 8.023
    a_f: float = 18.472
    b_f: float = 16.026
    a_s: float = 2.841
    b_s: float = 11.12
    a_fs: float = 0.216
    b_fs: float = 11.436
    lam: float = 100.0
    rho0: float = 1.06e-6
    fiber_tension_only: bool = True

    def __post_init__(self):
        for name in ("a", "a_f", "a_s", "a_fs", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"material parameter {name} must be non-negative")
        for name in ("b", "b_f", "b_s", "b_fs", "rho0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"material parameter {name} must be positive")

    @property
    def rho(self):
        return self.rho0 / DENSITY_UNIT

    @property
    def sound_speed(self):
        return float(np.sqrt((self.lam + 2.0 * self.a) / self.rho))


@dataclass(frozen=True)
class ActiveParams:
    ka: float = 1.0
    Vr: float = 0.0
    eps0: float = 0.1
    eps_inf: float = 1.0
    eps_neg_inf: float = 0.1
    xi: float = 1.0
    Vm_bar: float = 0.5


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def invariants(F, f0, s0):
    """``(I1, J, I_ff, I_ss, I_fs)`` of ``C = F^T F``; works on single or stacked tensors."""
    F = np.asarray(F, dtype=float)
    C = np.swapaxes(F, -1, -2) @ F
    I1 = np.trace(C, axis1=-2, axis2=-1)
    J = np.linalg.det(F)
    Cf = (C @ f0[..., None])[..., 0]
    Cs = (C @ s0[..., None])[..., 0]
    I_ff = np.sum(Cf * f0, axis=-1)
    I_ss = np.sum(Cs * s0, axis=-1)
    I_fs = np.sum(Cf * s0, axis=-1)
    return I1, J, I_ff, I_ss, I_fs


def _exp_checked(x, name):
    with np.errstate(over="ignore"):
        out = np.exp(x)
    if not np.all(np.isfinite(out)):
        raise MaterialBlowupError(f"exponential overflow in the {name} term")
    return out


def strain_energy(F, f0, s0, p: HoParams):
    I1, J, I_ff, I_ss, I_fs = invariants(F, f0, s0)
    if np.any(J <= 0):
        raise InvertedParticleError("det F <= 0")
    lnJ = np.log(J)
    W = p.a / (2 * p.b) * _exp_checked(p.b * (I1 - 3.0), "isotropic")
    W = W - p.a * lnJ + 0.5 * p.lam * lnJ**2
    for a_i, b_i, I in ((p.a_f, p.b_f, I_ff), (p.a_s, p.b_s, I_ss)):
        term = a_i / (2 * b_i) * (_exp_checked(b_i * (I - 1.0) ** 2, "fibre/sheet") - 1.0)
        W = W + (np.where(I > 1.0, term, 0.0) if p.fiber_tension_only else term)
    W = W + p.a_fs / (2 * p.b_fs) * (_exp_checked(p.b_fs * I_fs**2, "shear") - 1.0)
    return W


def second_pk(F, f0, s0, p: HoParams):
    """Second Piola-Kirchhoff stress ``S = 2 dW/dC``."""
    F = np.asarray(F, dtype=float)
    f0 = np.broadcast_to(f0, F.shape[:-1])
    s0 = np.broadcast_to(s0, F.shape[:-1])
    I1, J, I_ff, I_ss, I_fs = invariants(F, f0, s0)
    if np.any(J <= 0):
        raise InvertedParticleError("det F <= 0")
    C = np.swapaxes(F, -1, -2) @ F
    Cinv = np.linalg.inv(C)
    eye = np.eye(3)
    iso = p.a * _exp_checked(p.b * (I1 - 3.0), "isotropic")
    S = iso[..., None, None] * eye
    S = S + (-p.a + p.lam * np.log(J))[..., None, None] * Cinv
    ff = _outer(f0, f0)
    ss = _outer(s0, s0)
    cf = 2 * p.a_f * (I_ff - 1.0) * _exp_checked(p.b_f * (I_ff - 1.0) ** 2, "fibre")
    cs = 2 * p.a_s * (I_ss - 1.0) * _exp_checked(p.b_s * (I_ss - 1.0) ** 2, "sheet")
    if p.fiber_tension_only:
        cf = np.where(I_ff > 1.0, cf, 0.0)
        cs = np.where(I_ss > 1.0, cs, 0.0)
    S = S + cf[..., None, None] * ff + cs[..., None, None] * ss
    cfs = p.a_fs * I_fs * _exp_checked(p.b_fs * I_fs**2, "shear")
    S = S + cfs[..., None, None] * (_outer(f0, s0) + _outer(s0, f0))
    return S


def passive_stress(F, f0, s0, p: HoParams):
    """First Piola-Kirchhoff passive stress ``P = F S``."""
    return np.asarray(F, dtype=float) @ second_pk(F, f0, s0, p)


def active_stress(F, f0, Ta):
    """``P_a = Ta (F f0) (x) f0``."""
    F = np.asarray(F, dtype=float)
    f0 = np.broadcast_to(f0, F.shape[:-1])
    Ff = (F @ f0[..., None])[..., 0]
    return np.asarray(Ta)[..., None, None] * _outer(Ff, f0)


def activation_rate(Vm, act: ActiveParams):
    return act.eps0 + (act.eps_inf - act.eps_neg_inf) * np.exp(
        -np.exp(-act.xi * (np.asarray(Vm) - act.Vm_bar))
    )


def active_tension_step(Ta, Vm, dt, act: ActiveParams):
    """Exact exponential update of ``dTa/dt = eps(Vm) [ka (Vm - Vr) - Ta]`` with frozen Vm."""
    e = np.exp(-activation_rate(Vm, act) * dt)
    return Ta * e + act.ka * (np.asarray(Vm) - act.Vr) * (1.0 - e)


def cauchy_stress(F, P):
    J = np.linalg.det(F)
    return (P @ np.swapaxes(F, -1, -2)) / J[..., None, None]


def von_mises(sigma):
    dev = sigma - np.trace(sigma, axis1=-2, axis2=-1)[..., None, None] * np.eye(3) / 3.0
    return np.sqrt(1.5 * np.sum(dev * dev, axis=(-2, -1)))


class SolidMechanics:
    """Total-Lagrangian SPH body built on the reference pairs of a particle set.

    ``myo`` must provide ``ref_position``, ``volume``, ``fiber``, ``sheet``,
    ``kernel`` and the reference pair arrays (``pair_i``, ``pair_j``,
    ``pair_r``, ``pair_e``, ``pair_dwdr``).
    """

    def __init__(self, myo, material: HoParams, active: ActiveParams = ActiveParams(),
                 damping=0.1, fixed=None, active_mode="ode", Ta_max=0.1, hourglass=1.0):
        if active_mode not in ("ode", "constant"):
            raise ValueError("active_mode must be 'ode' or 'constant'")
        self.myo = myo
        self.material = material
        self.active = active
        self.active_mode = active_mode
        self.Ta_max = Ta_max
        n = len(myo)
        self.n = n
        self.r0 = myo.ref_position
        self.x = self.r0.copy()
        self.v = np.zeros((n, 3))
        self.Ta = np.zeros(n)
        self.fixed = np.zeros(n, dtype=bool) if fixed is None else np.asarray(fixed, bool)
        i, j = myo.pair_i, myo.pair_j
        # grad_i W_ij = W'(r) (r_i - r_j) / r = -W' e_ij
        g = -myo.pair_dwdr[:, None] * myo.pair_e
        V = myo.volume
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        self.G = [
            sparse.csr_matrix(
                (np.concatenate([V[j] * g[:, b], -V[i] * g[:, b]]), (rows, cols)), shape=(n, n)
            )
            for b in range(3)
        ]
        self.G1 = np.stack([Gb.sum(axis=1).A1 for Gb in self.G], axis=1)
        self.B = self._correction()
        h = myo.kernel.h
        self.nu = damping * material.sound_speed * h
        coef = 2.0 * self.nu * myo.pair_dwdr / myo.pair_r
        self.visc = laplacian_matrix(i, j, coef, V, n)
        # hourglass control: stiffness against pair motion that F cannot see
        kappa = hourglass * material.rho * material.sound_speed**2
        self._hg = kappa / material.rho * w_value(myo.pair_r, myo.kernel) / myo.pair_r**2
        self._dr0 = self.r0[j] - self.r0[i]
        self.F = np.tile(np.eye(3), (n, 1, 1))
        self.P = np.zeros((n, 3, 3))
        self.acc = np.zeros((n, 3))
        self.update_forces()

    def _correction(self):
        """``B_i = (sum_j V_j (r_j - r_i) (x) grad_i W_ij)^-1``."""
        M = self.gradient_tensor(self.r0)
        det = np.linalg.det(M)
        bad = np.nonzero(~(np.abs(det) > 1e-12))[0]
        if len(bad):
            raise ValueError(f"singular kernel moment matrix at particle {int(bad[0])}")
        return np.linalg.inv(M)

    def gradient_tensor(self, field):
        """``T_i = sum_j V_j (q_j - q_i) (x) grad_i W_ij`` for a vector field ``q``."""
        T = np.empty((self.n, 3, 3))
        for b, Gb in enumerate(self.G):
            T[:, :, b] = Gb @ field - self.G1[:, b, None] * field
        return T

    def deformation_gradient(self, x=None):
        x = self.x if x is None else x
        u = x - self.r0
        T = self.gradient_tensor(u)
        return np.eye(3) + T @ np.swapaxes(self.B, -1, -2)

    def update_forces(self):
        F = self.deformation_gradient()
        J = np.linalg.det(F)
        if np.any(J <= 0) or not np.all(np.isfinite(J)):
            bad = int(np.nonzero(~(J > 0))[0][0])
            raise InvertedParticleError(f"det F <= 0 at particle {bad}")
        self.F = F
        P = passive_stress(F, self.myo.fiber, self.myo.sheet, self.material)
        P = P + active_stress(F, self.myo.fiber, self.Ta)
        self.P = P
        self.acc = self.acceleration(P)

    def acceleration(self, P):
        """Symmetric total-Lagrangian pair force plus pairwise viscous damping."""
        A = P @ self.B
        acc = np.einsum("nab,nb->na", A, self.G1)
        for b, Gb in enumerate(self.G):
            acc += Gb @ A[:, :, b]
        acc /= self.material.rho
        acc += self.hourglass_acceleration()
        acc += self.visc @ self.v
        acc[self.fixed] = 0.0
        return acc

    def hourglass_acceleration(self):
        """Pairwise penalty on ``x_j - x_i`` deviating from ``(F_i + F_j)/2 (r0_j - r0_i)``.

        Zero for any affine (including rigid) motion and antisymmetric per
        pair, so it suppresses zig-zag modes without touching momentum.
        """
        i, j = self.myo.pair_i, self.myo.pair_j
        Fm = 0.5 * (self.F[i] + self.F[j])
        err = self.x[j] - self.x[i] - np.einsum("pab,pb->pa", Fm, self._dr0)
        V = self.myo.volume
        out = np.zeros((self.n, 3))
        for b in range(3):
            e = self._hg * err[:, b]
            out[:, b] = (np.bincount(i, V[j] * e, minlength=self.n)
                         - np.bincount(j, V[i] * e, minlength=self.n))
        return out

    def stable_dt(self, factor=0.6):
        h = self.myo.kernel.h
        c = self.material.sound_speed
        vmax = float(np.max(np.linalg.norm(self.v, axis=1))) if self.n else 0.0
        amax = float(np.max(np.linalg.norm(self.acc, axis=1))) if self.n else 0.0
        if not (np.isfinite(vmax) and np.isfinite(amax)):
            raise FloatingPointError("non-finite velocity or acceleration")
        dt = h / (c + vmax)
        if amax > 0:
            dt = min(dt, np.sqrt(h / amax))
        return factor * dt

    def update_tension(self, Vm, dt):
        if self.active_mode == "ode":
            self.Ta = active_tension_step(self.Ta, Vm, dt, self.active)
        else:
            self.Ta = self.Ta_max * np.clip(Vm, 0.0, 1.0)

    def step(self, dt, Vm=None):
        """Kick-drift-kick step of length ``dt``."""
        if Vm is not None:
            self.update_tension(Vm, dt)
        self.v += 0.5 * dt * self.acc
        self.v[self.fixed] = 0.0
        self.x += dt * self.v
        self.update_forces()
        self.v += 0.5 * dt * self.acc
        self.v[self.fixed] = 0.0

    def momentum(self):
        m = self.material.rho * self.myo.volume
        return np.sum(m[:, None] * self.v, axis=0)

    @property
    def displacement(self):
        return self.x - self.r0

    def von_mises(self):
        return von_mises(cauchy_stress(self.F, self.P))
