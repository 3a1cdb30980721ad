"""Time-step criteria and the single-/multi-rate drivers.

The multi-rate driver advances the myocardium by its diffusion step
``dt_Md`` (outer loop), then sub-cycles the network with ``dt_P`` and the
mechanics with ``dt_Mm`` until each has covered exactly ``dt_Md`` (the last
sub-step is clipped).  Junction currents use the network state at the
start of the outer step.
"""

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np

from .coupling import pmj_operator
from .ep_core import ApState, heun_diffusion, no_reaction, reaction_for, strang_compose

log = logging.getLogger(__name__)


class IntegrationBlowupError(FloatingPointError):
    pass


@dataclass
class StepSizes:
    dt_P: float
    dt_Md: float
    dt_Mm: float
    n_network: int
    n_mechanics: int


def compute_dt(network=None, myo=None, mech=None, safety=1.0, network_dim=3, myo_dim=3):
    """Stable step sizes of the three subsystems and the sub-cycle counts.

    ``dt_P = h^2 / (2 d d_P)``, ``dt_Md = h^2 / (2 d tr D)``,
    ``dt_Mm = 0.6 min(h / (c + |v|max), sqrt(h / |a|max))``.  Missing
    subsystems get an infinite step.
    """
    inf = math.inf
    dt_P = dt_Md = dt_Mm = inf
    if network is not None:
        dt_P = safety * network.kernel.h**2 / (2.0 * network_dim * network.d_iso)
    if myo is not None:
        dt_Md = safety * myo.kernel.h**2 / (2.0 * myo_dim * myo.trace_D)
    if mech is not None:
        dt_Mm = mech.stable_dt()
        if not np.isfinite(dt_Mm):
            raise IntegrationBlowupError("non-finite mechanical time step")
    ref = dt_Md if np.isfinite(dt_Md) else dt_P
    n_net = int(math.floor(ref / dt_P)) + 1 if np.isfinite(dt_P) else 0
    n_mech = int(math.floor(ref / dt_Mm)) + 1 if np.isfinite(dt_Mm) else 0
    return StepSizes(dt_P, dt_Md, dt_Mm, n_net, n_mech)


@dataclass
class Probe:
    name: str
    system: str  # "network" or "myocardium"
    index: int


@dataclass
class RunResult:
    times: np.ndarray
    probes: dict
    activation: dict
    final_states: dict
    wall_clock: dict
    steps: dict
    dt: StepSizes
    aborted: bool = False
    snapshots: list = field(default_factory=list)


class ActivationTracker:
    """First upward crossing of ``threshold`` per particle (linear in time)."""

    def __init__(self, n, threshold=0.5):
        self.threshold = threshold
        self.time = np.full(n, np.inf)

    def update(self, t0, v0, t1, v1):
        th = self.threshold
        new = (v0 < th) & (v1 >= th) & ~np.isfinite(self.time)
        if np.any(new):
            frac = (th - v0[new]) / (v1[new] - v0[new])
            self.time[new] = t0 + frac * (t1 - t0)

    def seed(self, t, v):
        hit = (v >= self.threshold) & ~np.isfinite(self.time)
        self.time[hit] = t


class Simulation:
    """Container wiring the subsystems of one run together."""

    def __init__(self, network=None, myo=None, mech=None, pmj=None, net_params=None,
                 myo_params=None, net_stimuli=(), myo_stimuli=(), probes=(), network_dim=3,
                 reaction=True, d_iso_M_coupling=None):
        self.network = network
        self.myo = myo
        self.mech = mech
        self.pmj = pmj
        self.net_params = net_params
        self.myo_params = myo_params
        self.net_stimuli = list(net_stimuli)
        self.myo_stimuli = list(myo_stimuli)
        self.probes = list(probes)
        self.network_dim = network_dim
        self.net_reaction = reaction_for(net_params) if (reaction and network is not None) else no_reaction
        self.myo_reaction = reaction_for(myo_params) if (reaction and myo is not None) else no_reaction
        self._pmj_s = None
        if pmj is not None and network is not None and myo is not None:
            dM = myo.d_iso if d_iso_M_coupling is None else d_iso_M_coupling
            self._pmj_s, self._pmj_B = pmj_operator(pmj, network.volume, dM, network.d_iso)
        self.t = 0.0
        self._initial = {
            "network": network.state.copy() if network is not None else None,
            "myocardium": myo.state.copy() if myo is not None else None,
        }

    def reset(self):
        """Restore the initial membrane (and mechanical) state."""
        if self.network is not None:
            self.network.state = self._initial["network"].copy()
        if self.myo is not None:
            self.myo.state = self._initial["myocardium"].copy()
        if self.mech is not None:
            self.mech.x = self.mech.r0.copy()
            self.mech.v[:] = 0.0
            self.mech.Ta[:] = 0.0
            self.mech.update_forces()

    def step_sizes(self, safety=1.0):
        return compute_dt(self.network, self.myo, self.mech, safety, self.network_dim)

    # ----------------------------------------------------------- sub-steps

    @staticmethod
    def _clamped(op, stimuli, t):
        def run(state, dt):
            out = op(state, dt)
            for s in stimuli:
                s.apply(out, t)
            return out

        return run

    def network_step(self, dt):
        net = self.network
        M = net.matrix

        def diffuse(state, h):
            return ApState(heun_diffusion(state.Vm, h, lambda u: M @ u), state.w)

        tm = self.t_net + 0.5 * dt
        net.state = strang_compose(
            net.state, dt,
            self._clamped(diffuse, self.net_stimuli, tm),
            self._clamped(self.net_reaction, self.net_stimuli, tm),
        )
        self.t_net += dt

    def myo_step(self, dt, v_network=None):
        myo = self.myo
        M = myo.matrix
        if self._pmj_s is not None and v_network is not None:
            # the junction current relaxes Vm towards a weighted network
            # potential; it can be far stiffer than diffusion, so it is
            # integrated exactly around the explicit diffusion step
            s = self._pmj_s / myo.Cm
            src = (self._pmj_B @ v_network) / myo.Cm
            on = s != 0.0
            u_eq = np.zeros_like(s)
            u_eq[on] = src[on] / s[on]

            def junction(u, h):
                u = u.copy()
                u[on] = u_eq[on] + (u[on] - u_eq[on]) * np.exp(s[on] * h)
                return u

            def diffuse(state, h):
                u = junction(state.Vm, 0.5 * h)
                u = heun_diffusion(u, h, lambda v: M @ v)
                return ApState(junction(u, 0.5 * h), state.w)
        else:
            def diffuse(state, h):
                return ApState(heun_diffusion(state.Vm, h, lambda v: M @ v), state.w)

        tm = self.t + 0.5 * dt
        myo.state = strang_compose(
            myo.state, dt,
            self._clamped(diffuse, self.myo_stimuli, tm),
            self._clamped(self.myo_reaction, self.myo_stimuli, tm),
        )

    def mech_step(self, dt):
        self.mech.step(dt, self.myo.state.Vm)

    # ------------------------------------------------------------- drivers

    def _init_run(self):
        self.reset()
        self.t = 0.0
        self.t_net = 0.0
        for s in self.net_stimuli:
            s.apply(self.network.state, 0.0)
        for s in self.myo_stimuli:
            s.apply(self.myo.state, 0.0)
        self.trackers = {}
        if self.network is not None:
            self.trackers["network"] = ActivationTracker(len(self.network))
            self.trackers["network"].seed(0.0, self.network.state.Vm)
        if self.myo is not None:
            self.trackers["myocardium"] = ActivationTracker(len(self.myo))
            self.trackers["myocardium"].seed(0.0, self.myo.state.Vm)
        self._times = [0.0]
        self._probe_data = {p.name: ([], []) for p in self.probes}
        self._record()

    def _system(self, name):
        return self.network if name == "network" else self.myo

    def _record(self):
        for p in self.probes:
            st = self._system(p.system).state
            vm, w = self._probe_data[p.name]
            vm.append(float(st.Vm[p.index]))
            w.append(float(st.w[p.index]))

    def _check_finite(self):
        for name in ("network", "myocardium"):
            sys_ = self._system(name)
            if sys_ is not None and not np.all(np.isfinite(sys_.state.Vm)):
                raise IntegrationBlowupError(f"non-finite transmembrane potential in {name}")

    def _result(self, dts, wall, steps, aborted, snapshots):
        final = {}
        if self.network is not None:
            final["network"] = self.network.state.copy()
        if self.myo is not None:
            final["myocardium"] = self.myo.state.copy()
        return RunResult(
            np.array(self._times),
            {k: (np.array(v[0]), np.array(v[1])) for k, v in self._probe_data.items()},
            {k: tr.time.copy() for k, tr in self.trackers.items()},
            final, wall, steps, dts, aborted, snapshots,
        )

    def run(self, t_end, multirate=True, safety=1.0, record_every=None, snapshot_times=(),
            on_snapshot=None, max_wall=None):
        """Advance to ``t_end``; ``multirate=False`` uses one global step for all subsystems.

        Outer steps are shortened where needed to land exactly on ``t_end``
        and on every time in ``snapshot_times``.
        """
        self._init_run()
        dts = self.step_sizes(safety)
        wall = {"network_ep": 0.0, "myocardium_ep": 0.0, "mechanics": 0.0}
        steps = {"outer": 0, "network": 0, "myocardium": 0, "mechanics": 0}
        snapshots = []
        pending = sorted(snapshot_times)
        start = time.perf_counter()
        if self.myo is not None:
            outer = dts.dt_Md
        else:
            outer = dts.dt_P
        if not multirate:
            outer = min(dts.dt_P, dts.dt_Md, dts.dt_Mm)
        record_every = record_every or outer
        next_record = record_every
        eps = 1e-12 * outer
        aborted = False
        while self.t < t_end - eps:
            dt = min(outer, t_end - self.t)
            if pending and pending[0] > self.t + eps:
                # land exactly on the next snapshot time
                dt = min(dt, pending[0] - self.t)
            t0 = self.t
            v_net0 = self.network.state.Vm.copy() if self.network is not None else None
            if self.myo is not None:
                c = time.perf_counter()
                v0 = self.myo.state.Vm.copy()
                self.myo_step(dt, v_net0)
                self.trackers["myocardium"].update(t0, v0, t0 + dt, self.myo.state.Vm)
                steps["myocardium"] += 1
                wall["myocardium_ep"] += time.perf_counter() - c
            if self.network is not None:
                c = time.perf_counter()
                self.t_net = t0
                covered = 0.0
                while covered < dt - eps:
                    sub = min(dts.dt_P, dt - covered) if multirate else dt - covered
                    vn = self.network.state.Vm.copy()
                    self.network_step(sub)
                    self.trackers["network"].update(t0 + covered, vn, t0 + covered + sub,
                                                    self.network.state.Vm)
                    covered += sub
                    steps["network"] += 1
                wall["network_ep"] += time.perf_counter() - c
            if self.mech is not None:
                c = time.perf_counter()
                covered = 0.0
                while covered < dt - eps:
                    sub = min(self.mech.stable_dt(), dt - covered) if multirate else dt - covered
                    self.mech_step(sub)
                    covered += sub
                    steps["mechanics"] += 1
                wall["mechanics"] += time.perf_counter() - c
            self.t = t0 + dt
            steps["outer"] += 1
            self._check_finite()
            if self.t >= next_record - eps or self.t >= t_end - eps:
                self._times.append(self.t)
                self._record()
                next_record += record_every
            while pending and self.t >= pending[0] - eps:
                pending.pop(0)
                snap = self.snapshot()
                snapshots.append(snap)
                if on_snapshot is not None:
                    on_snapshot(snap)
            if max_wall is not None and time.perf_counter() - start > max_wall:
                log.warning("wall-clock budget exceeded at t = %.3f ms; aborting", self.t)
                aborted = True
                break
        wall["total"] = time.perf_counter() - start
        return self._result(dts, wall, steps, aborted, snapshots)

    def snapshot(self):
        snap = {"t": self.t}
        if self.network is not None:
            snap["network"] = self.network.state.copy()
        if self.myo is not None:
            snap["myocardium"] = self.myo.state.copy()
        if self.mech is not None:
            snap["displacement"] = self.mech.displacement.copy()
            snap["Ta"] = self.mech.Ta.copy()
            snap["von_mises"] = self.mech.von_mises()
        return snap


def run_multirate(sim: Simulation, t_end, **kw) -> RunResult:
    return sim.run(t_end, multirate=True, **kw)


def run_singlerate(sim: Simulation, t_end, **kw) -> RunResult:
    return sim.run(t_end, multirate=False, **kw)
