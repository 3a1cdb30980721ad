"""Command-line front end: ``purkinje-sph <subcommand> ...``."""

import argparse
from dataclasses import replace
import logging
import os
import sys
import time

import numpy as np

from .config import BUILTIN, ConfigError, builtin, dumps, load_config
from .geometry import level_set_from_mesh, parse_mesh
from .netgen import grow_network
from .output import (SnapshotWriter, write_activation_csv, write_manifest, write_probes)
from .report import plot_network, write_report
from .scenarios import build, build_network_tree, growth_params

log = logging.getLogger("purkinje_sph")


def _load(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "scenario", None):
        cfg = builtin(args.scenario)
    else:
        raise ConfigError("either --scenario or --config is required")
    return cfg


def _read_mesh(path):
    with open(path, "rb") as fh:
        return parse_mesh(fh.read())


def cmd_levelset(args):
    soup = _read_mesh(args.mesh)
    t = time.perf_counter()
    grid = level_set_from_mesh(soup, args.spacing, args.padding)
    grid.dump(args.out)
    print(f"level set {tuple(grid.dims)} cells written to {args.out}.lsgrid "
          f"({time.perf_counter() - t:.2f} s)")
    return 0


def cmd_netgen(args):
    cfg = _load(args)
    if args.mesh:
        cfg.grid = replace(cfg.grid, mesh=args.mesh)
        cfg.network = replace(cfg.network, source="grow")
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    wall = {}
    c = time.perf_counter()
    if args.grid:
        from .geometry import LevelSetGrid

        grid = LevelSetGrid.load(args.grid)
        g = time.perf_counter()
        tree = grow_network(grid, growth_params(cfg))
        wall["network_generation"] = time.perf_counter() - g
    else:
        tree, grid = build_network_tree(cfg, wall)
    wall["total"] = time.perf_counter() - c
    tree.export(args.out)
    plot_network(args.out + ".network.png", tree, cfg.scenario.name)
    write_manifest(args.out + ".manifest.json", cfg, wall,
                   {"n_nodes": len(tree), "n_terminals": len(tree.terminal_node_ids)})
    print(f"network with {len(tree)} nodes and {len(tree.terminal_node_ids)} terminals "
          f"written to {args.out}.network.txt")
    return 0


def _run(args, mechanics):
    cfg = _load(args)
    if args.network:
        cfg.network = replace(cfg.network, enabled=True, source="file", file=args.network)
    if args.t_end is not None:
        cfg.scenario = replace(cfg.scenario, t_end=args.t_end)
    if args.single_rate:
        cfg.scenario = replace(cfg.scenario, multirate=False)
    if mechanics:
        cfg.mechanics = replace(cfg.mechanics, enabled=True)
    cfg.validate()
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.ini"), "w") as fh:
        fh.write(dumps(cfg))
    built = build(cfg)
    sim = built.sim
    sc = cfg.scenario
    snap_times = ()
    writer = None
    if sc.snapshot_every > 0:
        snap_times = np.arange(sc.snapshot_every, sc.t_end + 1e-9, sc.snapshot_every)
        writer = SnapshotWriter(args.out, sim, built.tree)
    result = sim.run(sc.t_end, multirate=sc.multirate, safety=sc.safety,
                     record_every=sc.record_every, snapshot_times=snap_times,
                     on_snapshot=writer, max_wall=sc.max_wall or None)
    write_probes(args.out, result)
    if sim.myo is not None:
        write_activation_csv(os.path.join(args.out, "activation_myocardium.csv"),
                             sim.myo.ref_position, result.activation["myocardium"])
    if sim.network is not None:
        write_activation_csv(os.path.join(args.out, "activation_network.csv"),
                             sim.network.ref_position, result.activation["network"])
        built.tree.export(os.path.join(args.out, "network"))
    if sim.pmj is not None:
        sim.pmj.export_csv(os.path.join(args.out, "pmj_map.csv"))
    write_report(args.out, result, sim, built.tree, sc.name)
    wall = dict(built.wall_clock)
    wall.update(result.wall_clock)
    dt = result.dt
    write_manifest(os.path.join(args.out, "manifest.json"), cfg, wall, {
        "steps": result.steps,
        "dt_ms": {"network": dt.dt_P, "myocardium_diffusion": dt.dt_Md,
                  "mechanics": dt.dt_Mm},
        "aborted": result.aborted,
        "n_network": len(sim.network) if sim.network is not None else 0,
        "n_myocardium": len(sim.myo) if sim.myo is not None else 0,
    })
    status = "aborted (wall-clock budget)" if result.aborted else "done"
    print(f"{sc.name}: {status} at t = {sim.t:.3f} ms in {wall['total']:.2f} s; "
          f"outputs in {args.out}")
    return 0


def cmd_run_ep(args):
    return _run(args, mechanics=False)


def cmd_run_em(args):
    return _run(args, mechanics=True)


def cmd_scenarios(args):
    if args.show:
        sys.stdout.write(dumps(builtin(args.show)))
        return 0
    for name, (desc, _) in BUILTIN.items():
        print(f"{name:16s} {desc}")
    return 0


def cmd_validate(args):
    cfg = _load(args)
    print(f"{args.config or args.scenario}: valid (sha256 {cfg.digest()[:12]})")
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="purkinje-sph", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("levelset", help="signed-distance grid from a surface mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--spacing", type=float, required=True)
    s.add_argument("--padding", type=int, default=4)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_levelset)

    s = sub.add_parser("netgen", help="generate a network and export it")
    s.add_argument("--scenario")
    s.add_argument("--config")
    s.add_argument("--mesh", help="grow on this surface mesh")
    s.add_argument("--grid", help="grow on a stored level-set grid prefix")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_netgen)

    for name, func, hlp in (("run-ep", cmd_run_ep, "electrophysiology run"),
                            ("run-em", cmd_run_em, "electromechanics run")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--scenario")
        s.add_argument("--config")
        s.add_argument("--network", help="network prefix written by netgen")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--t-end", type=float)
        s.add_argument("--single-rate", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("scenarios", help="list built-in scenarios")
    s.add_argument("--show", help="print the full config of one scenario")
    s.set_defaults(func=cmd_scenarios)

    s = sub.add_parser("validate", help="check a config file")
    s.add_argument("--config")
    s.add_argument("--scenario")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
