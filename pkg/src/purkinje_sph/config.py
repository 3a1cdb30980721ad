"""Run configuration: sectioned ``key = value`` text mapped onto dataclasses.

Unknown sections or keys are rejected.  Repeated sections ``[stimulus.NAME]``
and ``[probe.NAME]`` declare stimuli and probes.
"""

from dataclasses import dataclass, field, fields, asdict, replace
import configparser
import hashlib
import io
import json
import os

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioCfg:
    name: str = "custom"
    t_end: float = 100.0
    multirate: bool = True
    safety: float = 1.0
    record_every: float = 0.5
    snapshot_every: float = 0.0
    max_wall: float = 0.0
    seed: int = 0


@dataclass
class GeometryCfg:
    kind: str = "box"  # box | ellipsoid_shell | none
    extent: tuple = (40.0, 1.0, 20.0)
    origin: tuple = (0.0, 0.0, 0.0)
    dp0: float = 0.2
    h_ratio: float = 1.3
    min_axis_particles: int = 5
    endo_axes: tuple = (10.0, 10.0, 25.0)
    epi_axes: tuple = (15.0, 15.0, 30.0)
    base_z: float = 0.0
    fiber_rule: str = "constant"  # constant | helix
    fiber: tuple = (1.0, 0.0, 0.0)
    sheet: tuple = (0.0, 1.0, 0.0)
    helix_endo_deg: float = 60.0
    helix_epi_deg: float = -60.0


@dataclass
class GridCfg:
    spacing: float = 0.0  # 0 selects l_seg
    padding: int = 4
    mesh: str = ""  # surface the network grows on; empty = analytic endocardium
    subdivisions: int = 4


@dataclass
class NetworkCfg:
    enabled: bool = True
    source: str = "generic"  # straight | generic | grow | file
    file: str = ""
    l_seg: float = 0.2
    d_iso: float = 0.1
    dim: int = 3
    n_nodes: int = 50
    length: float = 20.0
    start: tuple = (0.0, 0.0, 0.0)
    direction: tuple = (1.0, 0.0, 0.0)
    av_node: tuple = (30.0, 0.9, 1.0)
    junction: tuple = (30.0, 0.9, 6.0)
    terminal_1: tuple = (20.5, 0.9, 10.0)
    terminal_2: tuple = (39.5, 0.9, 10.0)
    n_iterations: int = 5
    segments: int = 10
    first_branch_segments: int = 0  # 0 = same as segments
    alpha0: float = 0.35
    repulsion_weight: float = 0.1
    sigma: float = 0.0  # 0 = 5 l_seg
    z_max: float = float("inf")  # growth stops above this height
    initial_node: tuple = (0.0, 0.0, 0.0)
    initial_direction: tuple = (1.0, 0.0, 0.0)


@dataclass
class MyocardiumCfg:
    enabled: bool = True
    d_iso: float = 0.1
    d_ani: float = 0.01


@dataclass
class ApCfg:
    k: float = 8.0
    a: float = 0.15
    b: float = 0.15
    eps0: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3
    Cm: float = 1.0


@dataclass
class MechanicsCfg:
    enabled: bool = False
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
    damping: float = 0.1
    hourglass: float = 1.0
    active_mode: str = "ode"  # ode | constant
    Ta_max: float = 0.1
    ka: float = 1.0
    Vr: float = 0.0
    eps0_act: float = 0.1
    eps_inf: float = 1.0
    eps_neg_inf: float = 0.1
    xi: float = 1.0
    Vm_bar: float = 0.5
    fix_above_z: float = 1e30  # particles with z above this value are clamped


@dataclass
class StimulusCfg:
    system: str = "network"  # network | myocardium
    node: int = 0  # network node id (network stimuli)
    point: tuple = (0.0, 0.0, 0.0)  # centre of the stimulated region (myocardium)
    radius: float = 0.0
    value: float = 1.0
    t_start: float = 0.0
    t_end: float = 0.5


@dataclass
class ProbeCfg:
    system: str = "myocardium"
    point: tuple = (0.0, 0.0, 0.0)
    node: int = -1  # explicit particle id; -1 = nearest to point


@dataclass
class SimConfig:
    scenario: ScenarioCfg = field(default_factory=ScenarioCfg)
    geometry: GeometryCfg = field(default_factory=GeometryCfg)
    grid: GridCfg = field(default_factory=GridCfg)
    network: NetworkCfg = field(default_factory=NetworkCfg)
    myocardium: MyocardiumCfg = field(default_factory=MyocardiumCfg)
    ap_network: ApCfg = field(default_factory=ApCfg)
    ap_myocardium: ApCfg = field(default_factory=ApCfg)
    mechanics: MechanicsCfg = field(default_factory=MechanicsCfg)
    stimuli: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)

    @property
    def coupled(self):
        return self.network.enabled and self.myocardium.enabled

    def validate(self):
        errors = []
        if self.coupled and abs(self.network.l_seg - self.geometry.dp0) > 1e-12:
            errors.append(
                f"network.l_seg ({self.network.l_seg}) must equal geometry.dp0 "
                f"({self.geometry.dp0}) when network and myocardium are coupled"
            )
        if self.network.enabled and self.network.source == "file":
            for ext in (".network.txt", ".topology.json"):
                if not os.path.exists(self.network.file + ext):
                    errors.append(f"network.file: {self.network.file + ext} does not exist")
        if self.grid.mesh and not os.path.exists(self.grid.mesh):
            errors.append(f"grid.mesh: {self.grid.mesh} does not exist")
        checks = [
            ("scenario.t_end", self.scenario.t_end > 0),
            ("geometry.dp0", self.geometry.dp0 > 0),
            ("geometry.h_ratio", self.geometry.h_ratio > 0),
            ("network.l_seg", self.network.l_seg > 0),
            ("network.d_iso", self.network.d_iso > 0),
            ("myocardium.d_iso", self.myocardium.d_iso > 0),
            ("myocardium.d_ani", self.myocardium.d_ani >= 0),
            ("geometry.kind", self.geometry.kind in ("box", "ellipsoid_shell", "none")),
            ("geometry.fiber_rule", self.geometry.fiber_rule in ("constant", "helix")),
            ("network.source", self.network.source in ("straight", "generic", "grow", "file")),
            ("network.dim", self.network.dim in (1, 2, 3)),
            ("mechanics.active_mode", self.mechanics.active_mode in ("ode", "constant")),
            ("mechanics.damping", self.mechanics.damping >= 0),
            ("mechanics.hourglass", self.mechanics.hourglass >= 0),
        ]
        for section in ("ap_network", "ap_myocardium"):
            ap = getattr(self, section)
            for f in fields(ap):
                checks.append((f"{section}.{f.name}", getattr(ap, f.name) > 0))
            checks.append((f"{section}.a", ap.a < 1))
        for name, st in self.stimuli.items():
            checks.append((f"stimulus.{name}.system", st.system in ("network", "myocardium")))
            checks.append((f"stimulus.{name}.t_end", st.t_end >= st.t_start))
        for name, pr in self.probes.items():
            checks.append((f"probe.{name}.system", pr.system in ("network", "myocardium")))
        errors += [f"{name}: invalid value" for name, ok in checks if not ok]
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def to_dict(self):
        return asdict(self)

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()


_SECTIONS = {f.name: f.type for f in fields(SimConfig) if f.name not in ("stimuli", "probes")}


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, default, where):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            vals = tuple(float(x) for x in text.replace(",", " ").split())
            if len(vals) != len(default):
                raise ValueError(f"expected {len(default)} numbers")
            return vals
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from None


def _fill(obj, items, where):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}")
        changes[key] = _parse(text, getattr(obj, key), f"{where}.{key}")
    return replace(obj, **changes)


def loads(text, base=None) -> SimConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base if base is not None else SimConfig()
    cfg = replace(cfg, stimuli=dict(cfg.stimuli), probes=dict(cfg.probes))
    for section in cp.sections():
        items = list(cp.items(section))
        if section in _SECTIONS:
            setattr(cfg, section, _fill(getattr(cfg, section), items, section))
        elif section.startswith("stimulus."):
            name = section.split(".", 1)[1]
            cfg.stimuli[name] = _fill(cfg.stimuli.get(name, StimulusCfg()), items, section)
        elif section.startswith("probe."):
            name = section.split(".", 1)[1]
            cfg.probes[name] = _fill(cfg.probes.get(name, ProbeCfg()), items, section)
        else:
            raise ConfigError(f"unknown section [{section}]")
    return cfg.validate()


def load_config(path) -> SimConfig:
    """Load a config file; a ``scenario.base`` key is not supported, use ``--scenario`` overlays."""
    with open(path) as fh:
        text = fh.read()
    return loads(text)


def dumps(cfg: SimConfig) -> str:
    out = io.StringIO()
    for section in _SECTIONS:
        out.write(f"[{section}]\n")
        obj = getattr(cfg, section)
        for f in fields(obj):
            out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
        out.write("\n")
    for prefix, group in (("stimulus", cfg.stimuli), ("probe", cfg.probes)):
        for name, obj in group.items():
            out.write(f"[{prefix}.{name}]\n")
            for f in fields(obj):
                out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
            out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------- built-ins

def _fiber():
    cfg = SimConfig()
    cfg.scenario = ScenarioCfg(name="fiber", t_end=400.0, record_every=0.5)
    cfg.geometry = replace(cfg.geometry, kind="none")
    cfg.myocardium = replace(cfg.myocardium, enabled=False)
    cfg.network = replace(cfg.network, source="straight", n_nodes=50, length=20.0,
                          l_seg=20.0 / 49, d_iso=0.1)
    cfg.stimuli = {"left": StimulusCfg(system="network", node=0, value=1.0, t_start=0.0, t_end=0.5)}
    cfg.probes = {
        "left": ProbeCfg(system="network", node=0),
        "middle": ProbeCfg(system="network", node=25),
        "right": ProbeCfg(system="network", node=49),
    }
    return cfg


def _cuboid(dp0=0.2):
    cfg = SimConfig()
    cfg.scenario = ScenarioCfg(name="cuboid" if dp0 == 0.2 else "cuboid-half", t_end=120.0,
                               record_every=0.5)
    cfg.geometry = replace(cfg.geometry, kind="box", extent=(40.0, 1.0, 20.0), dp0=dp0,
                           min_axis_particles=5 if dp0 <= 0.2 else 2)
    # the network lies in the top particle layer of the slab
    y = (np.floor(1.0 / dp0 + 1e-9) - 0.5) * dp0
    cfg.network = replace(cfg.network, source="generic", l_seg=dp0, d_iso=0.1,
                          av_node=(30.0, y, 1.0), junction=(30.0, y, 6.0),
                          terminal_1=(20.5, y, 10.0), terminal_2=(39.5, y, 10.0))
    cfg.myocardium = MyocardiumCfg(True, 0.1, 0.01)
    cfg.stimuli = {"av_node": StimulusCfg(system="network", node=0, t_start=0.0, t_end=0.5)}
    cfg.probes = {
        "P1": ProbeCfg(system="myocardium", point=(30.0, 1.0, 10.0)),
        "T1_network": ProbeCfg(system="network", point=(20.5, y, 10.0)),
        "T2_network": ProbeCfg(system="network", point=(39.5, y, 10.0)),
        "av_node": ProbeCfg(system="network", node=0),
    }
    return cfg


def _lv(kind):
    cfg = SimConfig()
    cfg.scenario = ScenarioCfg(name=kind, t_end=80.0, record_every=0.5)
    cfg.geometry = replace(cfg.geometry, kind="ellipsoid_shell", dp0=1.0, fiber_rule="helix")
    cfg.grid = GridCfg(spacing=1.0, padding=4, mesh="", subdivisions=4)
    cfg.network = replace(
        cfg.network, enabled=(kind != "lv-nonetwork"), source="grow", l_seg=1.0, d_iso=22.0,
        n_iterations=10, segments=4, first_branch_segments=20, alpha0=0.6, repulsion_weight=0.1,
        sigma=2.5, z_max=-2.0, initial_node=(-9.9, 0.0, -3.0), initial_direction=(0.0, 0.0, -1.0),
    )
    cfg.myocardium = MyocardiumCfg(True, 0.8, 1.2)
    ap = ApCfg(a=0.01)
    cfg.ap_network = ap
    cfg.ap_myocardium = ap
    cfg.mechanics = replace(cfg.mechanics, active_mode="constant", Ta_max=0.1, fix_above_z=-1.0)
    if kind == "lv-nonetwork":
        cfg.stimuli = {"base": StimulusCfg(system="myocardium", point=(-12.5, 0.0, -2.0),
                                           radius=3.0, t_start=0.0, t_end=1.0)}
    else:
        cfg.stimuli = {"av_node": StimulusCfg(system="network", node=0, t_start=0.0, t_end=1.0)}
    if kind == "lv-pathological":
        cfg.stimuli["extra_source"] = StimulusCfg(system="myocardium", point=(12.5, 0.0, -12.0),
                                                  radius=3.0, t_start=0.0, t_end=1.0)
    cfg.probes = {
        "apex": ProbeCfg(system="myocardium", point=(0.0, 0.0, -27.5)),
        "base_septum": ProbeCfg(system="myocardium", point=(-12.5, 0.0, -1.0)),
        "base_free_wall": ProbeCfg(system="myocardium", point=(12.5, 0.0, -1.0)),
        "mid_free_wall": ProbeCfg(system="myocardium", point=(12.5, 0.0, -12.0)),
    }
    return cfg


BUILTIN = {
    "fiber": ("20 mm fibre, 50 network particles, stimulus at the left end", _fiber),
    "cuboid": ("40x1x20 mm slab, dp0 = 0.2 mm, generic 3-branch network", _cuboid),
    "cuboid-half": ("cuboid at half resolution (dp0 = 0.4 mm)", lambda: _cuboid(0.4)),
    "lv-healthy": ("ellipsoidal ventricle, grown network, AV-node stimulus", lambda: _lv("lv-healthy")),
    "lv-pathological": ("as lv-healthy plus a free-wall myocardial source",
                        lambda: _lv("lv-pathological")),
    "lv-nonetwork": ("ellipsoidal ventricle without network, basal stimulus",
                     lambda: _lv("lv-nonetwork")),
}


def builtin(name) -> SimConfig:
    if name not in BUILTIN:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(BUILTIN)}")
    return BUILTIN[name][1]().validate()
