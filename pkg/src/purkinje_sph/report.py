"""Static figures for a finished run (matplotlib, non-interactive backend)."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_probes(path, result, title=""):
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, (vm, _) in result.probes.items():
        ax.plot(result.times, vm, label=name)
    ax.set_xlabel("time [ms]")
    ax.set_ylabel("Vm [-]")
    ax.set_title(title or "probe potentials")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_activation(path, positions, times, tree=None, title=""):
    """Activation map: 2D scatter onto the two widest coordinate axes."""
    positions = np.asarray(positions)
    span = np.ptp(positions, axis=0)
    ax0, ax1 = np.argsort(span)[::-1][:2]
    ax0, ax1 = sorted((ax0, ax1))
    finite = np.isfinite(times)
    fig, ax = plt.subplots(figsize=(7, 5))
    sc = ax.scatter(positions[finite, ax0], positions[finite, ax1], c=times[finite], s=2,
                    cmap="viridis")
    if np.any(~finite):
        ax.scatter(positions[~finite, ax0], positions[~finite, ax1], c="lightgray", s=2)
    if tree is not None:
        for a, b in tree.edges():
            p, q = tree.positions[a], tree.positions[b]
            ax.plot([p[ax0], q[ax0]], [p[ax1], q[ax1]], color="crimson", lw=0.8)
    fig.colorbar(sc, ax=ax, label="activation time [ms]")
    names = "xyz"
    ax.set_xlabel(f"{names[ax0]} [mm]")
    ax.set_ylabel(f"{names[ax1]} [mm]")
    ax.set_aspect("equal")
    ax.set_title(title or "activation map")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_network(path, tree, title=""):
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    for a, b in tree.edges():
        p, q = tree.positions[a], tree.positions[b]
        ax.plot([p[0], q[0]], [p[1], q[1]], [p[2], q[2]], color="k", lw=0.6)
    term = tree.positions[tree.terminal_node_ids]
    if len(term):
        ax.scatter(term[:, 0], term[:, 1], term[:, 2], c="crimson", s=6)
    ax.set_title(title or f"network ({len(tree)} nodes)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report(out_dir, result, sim, tree=None, title=""):
    """Render every figure that applies to the run; returns the written paths."""
    paths = [plot_probes(os.path.join(out_dir, "probes.png"), result, title)]
    if sim.myo is not None and "myocardium" in result.activation:
        paths.append(plot_activation(os.path.join(out_dir, "activation_myocardium.png"),
                                     sim.myo.ref_position, result.activation["myocardium"],
                                     tree, title))
    if tree is not None:
        paths.append(plot_network(os.path.join(out_dir, "network.png"), tree, title))
    return paths
