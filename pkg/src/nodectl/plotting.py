"""SVG figures of trajectories and particle clouds.

Each start point is drawn as a filled circle and its target as a hollow
circle of the same colour.  Output is byte-stable: the SVG carries no date
and matplotlib's element ids come from a fixed hash salt.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SVG_META = {"Date": None, "Creator": "nodectl"}


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "nodectl", "svg.fonttype": "none"}):
        fig.savefig(Path(path), format="svg", metadata=_SVG_META)
    plt.close(fig)


def _planar(P: np.ndarray) -> np.ndarray:
    P = np.atleast_2d(P)
    if P.shape[-1] >= 2:
        return P[..., :2]
    return np.concatenate([P, np.zeros(P.shape[:-1] + (1,))], axis=-1)


def plot_trajectories(path, times, states, targets=None, title: str = "") -> None:
    """Project ``states[points, samples, d]`` onto the first two coordinates.

    One-dimensional data is drawn against time instead.
    """
    states = np.asarray(states, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    colours = plt.cm.tab10(np.arange(states.shape[0]) % 10)
    one_d = states.shape[-1] == 1
    for i, colour in enumerate(colours):
        if one_d:
            xs, ys = np.asarray(times), states[i, :, 0]
        else:
            xs, ys = states[i, :, 0], states[i, :, 1]
        ax.plot(xs, ys, color=colour, lw=1.0)
        ax.plot(xs[0], ys[0], "o", color=colour, ms=6)
        if targets is not None:
            tgt = np.atleast_2d(targets)[i]
            tx, ty = (xs[-1], tgt[0]) if one_d else (tgt[0], tgt[1])
            ax.plot(tx, ty, "o", mfc="none", mec=colour, ms=9, mew=1.5)
    ax.set_xlabel("t" if one_d else "x_1")
    ax.set_ylabel("x_1" if one_d else "x_2")
    if title:
        ax.set_title(title)
    ax.set_aspect("auto" if one_d else "equal", adjustable="datalim")
    fig.tight_layout()
    _save(fig, path)


def plot_clouds(path, before: np.ndarray, after: np.ndarray, title: str = "", limit: int = 4000) -> None:
    """Scatter a particle cloud before and after transport, side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.5))
    for ax, P, label in ((axes[0], before, "initial"), (axes[1], after, "final")):
        Q = _planar(np.asarray(P))[:limit]
        ax.scatter(Q[:, 0], Q[:, 1], s=2, color="tab:blue", rasterized=False)
        ax.set_title(label)
        ax.set_aspect("equal", adjustable="datalim")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(path, widths, errors, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(widths, errors, "o-", color="tab:blue")
    ax.set_xlabel("width p")
    ax.set_ylabel("sup error on grid")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_interval(path, estimate: float, low: float, high: float, reference=None, title: str = "") -> None:
    """A point estimate with its confidence interval, against an optional reference value."""
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.errorbar([0.0], [estimate], yerr=[[estimate - low], [high - estimate]], fmt="o", color="tab:blue",
                capsize=6, label="estimate")
    if reference is not None:
        ax.axhline(reference, color="tab:orange", ls="--", label="reference")
    ax.set_xticks([])
    ax.set_ylabel("probability")
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
