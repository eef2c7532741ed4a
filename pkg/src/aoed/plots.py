"""Figure rendering for the command line reports.

Every CLI command that writes delimited output can also render the
matching figure next to it.  All functions save to a file and return the
path; nothing is shown interactively.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np

_DPI = 150


def _domain_axes(ax, mesh):
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_aspect("equal")
    for r in mesh.holes:
        ax.add_patch(
            plt.Rectangle(
                (r.x0, r.y0), r.x1 - r.x0, r.y1 - r.y0,
                facecolor="0.82", edgecolor="0.4", zorder=3,
            )
        )


def plot_mesh(path, mesh, sensors=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    ax.triplot(tri, lw=0.3, color="0.5")
    _domain_axes(ax, mesh)
    if sensors is not None:
        ax.plot(sensors[:, 0], sensors[:, 1], "k.", ms=3, zorder=4)
    ax.set_title(f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_spectrum(path, sigma_raw, sigma_preconditioned):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    k1 = np.arange(1, len(sigma_raw) + 1)
    k2 = np.arange(1, len(sigma_preconditioned) + 1)
    ax.semilogy(k1, sigma_raw / sigma_raw[0], "o-", ms=3, label="raw map")
    ax.semilogy(
        k2,
        sigma_preconditioned / sigma_preconditioned[0],
        "s-",
        ms=3,
        label="preconditioned map",
    )
    ax.set_xlabel("index")
    ax.set_ylabel("normalized singular value")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_design(path, mesh, sensors, weights):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.4))
    ax = axes[0]
    _domain_axes(ax, mesh)
    active = weights > 0.5
    ax.plot(sensors[~active, 0], sensors[~active, 1], ".", color="0.7", ms=4)
    sc = ax.scatter(
        sensors[active, 0], sensors[active, 1],
        c=weights[active], cmap="viridis", vmin=0, vmax=1, s=36, zorder=4,
    )
    fig.colorbar(sc, ax=ax, shrink=0.85)
    ax.set_title(f"{int(active.sum())} active of {len(weights)} candidates")
    ax2 = axes[1]
    ax2.stem(np.arange(len(weights)), weights, basefmt=" ")
    ax2.set_xlabel("sensor index")
    ax2.set_ylabel("weight")
    ax2.set_ylim(-0.05, 1.05)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_variance_field(path, mesh, values, sensors=None, title="posterior variance"):
    fig, ax = plt.subplots(figsize=(5.5, 4.6))
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    im = ax.tripcolor(tri, values, shading="gouraud")
    _domain_axes(ax, mesh)
    if sensors is not None and len(sensors):
        ax.plot(sensors[:, 0], sensors[:, 1], "r^", ms=5, zorder=4)
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_compare(path, labels, counts, traces):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    markers = {"optimal": "*", "l1": "P", "uniform": "s", "random": "."}
    seen = set()
    for label, cnt, tr in zip(labels, counts, traces):
        base = label.split("-")[0]
        mk = markers.get(base, "o")
        show = base not in seen
        seen.add(base)
        ax.plot(
            cnt, tr, mk,
            ms=11 if base == "optimal" else 7,
            color={"optimal": "C3", "l1": "C0", "uniform": "C2"}.get(base, "0.6"),
            label=base if show else None,
        )
    ax.set_xlabel("number of active sensors")
    ax.set_ylabel("posterior trace")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trace_study(path, n_vectors, mean_errors):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(n_vectors, np.asarray(mean_errors) * 100, "o-")
    ax.set_xlabel("number of trace estimator vectors")
    ax.set_ylabel("mean relative error (%)")
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_rank_study(path, ranks, objectives):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(ranks, objectives, "o-")
    ax.set_xlabel("surrogate rank")
    ax.set_ylabel("optimized objective")
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_optimizer_trace(path, rows):
    rows = list(rows)
    if not rows:
        return None
    it = [r[0] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(it, [r[1] for r in rows], label="objective")
    axes[0].plot(it, [r[2] for r in rows], label="penalty")
    axes[0].set_xlabel("iteration")
    axes[0].legend()
    axes[0].grid(alpha=0.3)
    axes[1].semilogy(it, [max(r[3], 1e-16) for r in rows])
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("projected gradient norm")
    axes[1].grid(which="both", alpha=0.3)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path
