"""Aliev-Panfilov membrane model and the split reaction/diffusion integrators.

Potentials are nondimensional; ``Vm(mV) = -80 + 100 Vm``.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ApParams:
    k: float = 8.0
    a: float = 0.15
    b: float = 0.15
    eps0: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3
    Cm: float = 1.0

    def __post_init__(self):
        for name in ("k", "a", "b", "eps0", "mu1", "mu2", "Cm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Aliev-Panfilov parameter {name} must be positive")
        if not self.a < 1:
            raise ValueError("Aliev-Panfilov parameter a must be below 1")


# the two parameter sets used by the fibre/cuboid runs and the ventricle runs
AP_FIBER = ApParams()
AP_VENTRICLE = ApParams(a=0.01)


@dataclass
class ApState:
    Vm: np.ndarray
    w: np.ndarray

    @classmethod
    def resting(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def copy(self):
        return ApState(np.array(self.Vm, dtype=float), np.array(self.w, dtype=float))


def i_ion(Vm, w, p: ApParams):
    return -p.k * Vm * (Vm - p.a) * (Vm - 1.0) - w * Vm


def epsilon(Vm, w, p: ApParams):
    den = p.mu2 + np.asarray(Vm, dtype=float)
    if np.any(den == 0):
        raise ZeroDivisionError("mu2 + Vm = 0: gating rate is singular")
    return p.eps0 + p.mu1 * w / den


def g_gate(Vm, w, p: ApParams):
    return epsilon(Vm, w, p) * (-p.k * Vm * (Vm - p.b - 1.0) - w)


def ode_rhs(Vm, w, p: ApParams):
    """Right-hand side of the membrane ODE system (dVm/dt, dw/dt)."""
    return i_ion(Vm, w, p) / p.Cm, g_gate(Vm, w, p)


def _qss(y, dt, pq):
    """Advance ``dy/dt = p(y) - q(y) y`` by ``dt`` with a frozen-rate exponential.

    The rates are frozen at a half-step predictor, which makes the update
    second-order accurate.  Where the frozen ``q`` is not positive an explicit
    midpoint step is used instead.
    """
    p0, q0 = pq(y)
    half = 0.5 * dt
    pos = q0 > 0
    qs = np.where(pos, q0, 1.0)
    e = np.exp(-qs * half)
    y_half = np.where(pos, y * e + (p0 / qs) * (1.0 - e), y + half * (p0 - q0 * y))
    pm, qm = pq(y_half)
    pos = qm > 0
    qs = np.where(pos, qm, 1.0)
    e = np.exp(-qs * dt)
    return np.where(pos, y * e + (pm / qs) * (1.0 - e), y + dt * (pm - qm * y_half))


def reaction_substep(state: ApState, dt, p: ApParams) -> ApState:
    """Advance the membrane ODEs by ``dt`` with reaction-by-reaction splitting.

    Terms: A = -k Vm (Vm - a)(Vm - 1), B = -w Vm (both in Vm) and the gating
    equation W (in w); composed symmetrically as A B W B A.
    """
    if dt == 0:
        return state.copy()
    V = np.asarray(state.Vm, dtype=float)
    w = np.asarray(state.w, dtype=float)
    zero = np.zeros_like(V)
    h = 0.5 * dt

    def term_a(v):
        return zero, p.k * (v - p.a) * (v - 1.0) / p.Cm

    # B is linear in Vm with a rate fixed while w is frozen: exact exponential
    decay_b = np.exp(-(w / p.Cm) * h)

    V = _qss(V, h, term_a)
    V = V * decay_b

    def term_w(ww):
        eps = epsilon(V, ww, p)
        return eps * (-p.k * V * (V - p.b - 1.0)), eps

    w = _qss(w, dt, term_w)
    V = V * np.exp(-(w / p.Cm) * h)
    V = _qss(V, h, term_a)
    return ApState(V, w)


def heun_diffusion(Vm, dt, rate):
    """Heun (explicit trapezoidal) step for ``dVm/dt = rate(Vm)``."""
    k1 = rate(Vm)
    k2 = rate(Vm + dt * k1)
    return Vm + 0.5 * dt * (k1 + k2)


def strang_compose(state: ApState, dt, diffusion_op, reaction):
    """``S_r(dt/2) o S_d(dt) o S_r(dt/2)``.

    ``reaction(state, dt)`` and ``diffusion_op(state, dt)`` both return new
    states.
    """
    s = reaction(state, 0.5 * dt)
    s = diffusion_op(s, dt)
    return reaction(s, 0.5 * dt)


def no_reaction(state, dt):
    return state.copy()


def reaction_for(p: ApParams):
    def step(state, dt):
        return reaction_substep(state, dt, p)

    return step


@dataclass
class Stimulus:
    """Clamp ``Vm`` of the listed particles to ``value`` for ``t_start <= t <= t_end``."""

    ids: np.ndarray
    value: float = 1.0
    t_start: float = 0.0
    t_end: float = 0.5

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)

    def active(self, t):
        return self.t_start <= t <= self.t_end

    def apply(self, state: ApState, t):
        if len(self.ids) and self.active(t):
            state.Vm[self.ids] = self.value


def with_params(p: ApParams, **changes):
    return replace(p, **changes)
