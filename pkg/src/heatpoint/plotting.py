"""Report figures: truth-vs-estimate scatter and relative-error trace."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "svg.hashsalt": "heatpoint",
}

# keeps PNG bytes identical across runs and matplotlib builds
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata=_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_sources(result, path) -> Path:
    path = Path(path)
    mesh = result.problem.mesh
    a = mesh.domain.half_width
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 4.0))
        ax.plot([-a, a, a, -a, -a], [-a, -a, a, a, -a], color="k", lw=1)
        ax.scatter(mesh.nodes[:, 0], mesh.nodes[:, 1], s=2, color="0.8", zorder=1)
        sens = result.problem.plan.sensors
        ax.scatter(sens[:, 0], sens[:, 1], marker="s", s=25, color="tab:green", label="sensor", zorder=3)
        truth = result.config.truth
        if truth.count:
            ax.scatter(
                truth.locations[:, 0], truth.locations[:, 1],
                s=140, facecolors="none", edgecolors="tab:blue", lw=1.5, label="exact", zorder=4,
            )
        est = result.estimate
        if est.count:
            sizes = 20 + 80 * np.abs(est.intensities) / max(np.abs(est.intensities).max(), 1e-12)
            ax.scatter(
                est.locations[:, 0], est.locations[:, 1],
                s=sizes, marker="x", color="tab:red", label="reconstruction", zorder=5,
            )
        ax.set_xlim(-a * 1.08, a * 1.08)
        ax.set_ylim(-a * 1.08, a * 1.08)
        ax.set_aspect("equal")
        ax.set_title(f"{result.config.name} (seed {result.config.seed})")
        ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.08), ncol=3, frameon=False)
        return _save(fig, path)


def plot_error_trace(result, path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 3.0))
        runs = [(result, "thinning" if result.config.sampler.thinning else "no thinning")]
        if result.reference is not None:
            runs.append((result.reference, "thinning"))
        for res, label in runs:
            it = np.array([r.iteration for r in res.state.trace])
            err = np.array([r.relative_error for r in res.state.trace])
            ax.semilogy(it, np.maximum(err, 1e-6), label=label, lw=1.2)
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("relative error")
        ax.grid(True, which="both", lw=0.3, alpha=0.5)
        ax.legend(frameon=False)
        return _save(fig, path)
