"""SVG figures: Betti step plots, sublevel rasters and geodesic overlays.

Figures are built on a bare ``Figure`` (no pyplot state) and written with a
fixed hash salt and no date so repeated runs give identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .homology import ScanRow, grid_values
from .model import TWO_PI, System, TrigPotential, reduce_angles

_RC = {"svg.hashsalt": "torusmech", "svg.fonttype": "none"}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def betti_step_plot(rows: Sequence[ScanRow], path, title: str = "") -> Path:
    """Step plot of each Betti number against the energy level."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    E = np.array([r.E for r in rows])
    B = np.array([r.betti.betti for r in rows])
    for d in range(B.shape[1]):
        ax.step(E, B[:, d], where="post", label=f"beta_{d}")
    ax.set_xlabel("E")
    ax.set_ylabel("Betti number")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize="small")
    return _save(fig, path)


def _angle_axes(ax):
    ticks = [0, np.pi / 2, np.pi, 3 * np.pi / 2, TWO_PI]
    labels = ["0", "pi/2", "pi", "3pi/2", "2pi"]
    ax.set_xticks(ticks, labels)
    ax.set_yticks(ticks, labels)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")


def domain_raster_plot(U: TrigPotential, E: float, r: int, path) -> Path:
    """Grid vertices of ``{U <= E}`` on a 2-torus, drawn as a raster."""
    if U.n != 2:
        raise ValueError("raster plots need n = 2")
    active = grid_values(U, (r, r)) <= E
    fig = Figure(figsize=(4, 4))
    ax = fig.add_subplot()
    # rows of the image are x2, columns x1
    ax.imshow(active.T.astype(float), origin="lower", extent=(0, TWO_PI, 0, TWO_PI), cmap="Greys",
              vmin=0, vmax=1, interpolation="nearest")
    _angle_axes(ax)
    ax.set_title(f"U <= {E:g}, r = {r}")
    return _save(fig, path)


def _wrapped_pieces(loop: np.ndarray):
    """Split a lifted loop into pieces that do not cross the fundamental square."""
    pts = reduce_angles(loop)
    jumps = np.any(np.abs(np.diff(pts, axis=0)) > np.pi, axis=1)
    cuts = np.flatnonzero(jumps) + 1
    return np.split(pts, cuts)


def geodesic_overlay_plot(system: System, loop: np.ndarray, path, closing=None, E: float | None = None,
                          r: int = 128) -> Path:
    """Loop drawn over a heat map of the potential on a 2-torus.

    ``closing`` is the lifted end point ``loop[0] + 2 pi m``; without it the
    last segment is left out.
    """
    if system.n != 2:
        raise ValueError("geodesic overlays need n = 2")
    vals = grid_values(system.potential, (r, r))
    fig = Figure(figsize=(4.5, 4))
    ax = fig.add_subplot()
    im = ax.imshow(vals.T, origin="lower", extent=(0, TWO_PI, 0, TWO_PI), cmap="viridis")
    fig.colorbar(im, ax=ax, label="U")
    closed = loop if closing is None else np.vstack([loop, np.asarray(closing)[None, :]])
    for piece in _wrapped_pieces(closed):
        ax.plot(piece[:, 0], piece[:, 1], color="white", lw=1.2)
    _angle_axes(ax)
    ax.set_xlim(0, TWO_PI)
    ax.set_ylim(0, TWO_PI)
    if E is not None:
        ax.set_title(f"E = {E:g}")
    return _save(fig, path)
