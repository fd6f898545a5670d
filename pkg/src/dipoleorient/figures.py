"""Diagnostic plots written to image files (non-interactive backend)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import correctness_mask  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def plot_interactions(trace, path):
    """|V| of each visited patch in visit order; flipped patches in red."""
    v = np.array([abs(e.interaction) for e in trace.entries[1:]])
    flipped = np.array([e.flipped for e in trace.entries[1:]], dtype=bool)
    steps = np.arange(1, len(trace.entries))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, v, color="0.4", lw=0.8)
        if flipped.any():
            ax.scatter(steps[flipped], v[flipped], s=10, color="tab:red", zorder=3,
                       label="flipped")
            ax.legend(frameon=False)
        if len(v) and np.all(v > 0):
            ax.set_yscale("log")
        ax.set_xlabel("propagation step")
        ax.set_ylabel("|V|")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_error_map(cloud, truth, path):
    """Three axis-aligned projections; misoriented points drawn in red."""
    ok = correctness_mask(cloud.normals, truth.normals)
    p = cloud.positions
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.4))
        for ax, (a, b), name in zip(axes, [(0, 1), (0, 2), (1, 2)], ["xy", "xz", "yz"]):
            ax.scatter(p[ok, a], p[ok, b], s=0.5, color="0.6", rasterized=True)
            ax.scatter(p[~ok, a], p[~ok, b], s=2.0, color="tab:red", rasterized=True)
            ax.set_aspect("equal")
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.suptitle(f"{int((~ok).sum())} of {len(ok)} points misoriented")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def write_figures(outdir, trace=None, cloud=None, truth=None) -> list[Path]:
    """Render whichever figures the inputs allow; returns the written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if trace is not None and len(trace.entries) > 1:
        path = outdir / "interactions.png"
        plot_interactions(trace, path)
        written.append(path)
    if cloud is not None and truth is not None:
        path = outdir / "error_map.png"
        plot_error_map(cloud, truth, path)
        written.append(path)
    return written
