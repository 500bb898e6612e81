"""Matplotlib figures for runs: per-tick frames, the final shape and the
Stable fraction over time.

All figures are written as SVG with fixed hash salt and no date stamp, so
re-running a scenario reproduces them byte for byte.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

from .engine import World, fragments  # noqa: E402
from .gene import Gene, embed  # noqa: E402
from .protocol import State  # noqa: E402

STATE_COLORS = {
    State.QUEUED: "#9e9e9e",
    State.SEARCH: "#1f77b4",
    State.INACTIVE: "#bcbd22",
    State.ACTIVE: "#2ca02c",
    State.QUASI: "#17becf",
    State.STABLE: "#d62728",
    State.DANGER: "#ff7f0e",
    State.LEADER: "#9467bd",
}

plt.rcParams["svg.hashsalt"] = "etswarm"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _shape_outline(ax, gene: Gene, d: float, offset=(0.0, 0.0)) -> None:
    for tag in gene.ones():
        p = embed(tag, d)
        ax.add_patch(Circle((p.px + offset[0], p.py + offset[1]), 0.5 * d, fill=False,
                            ec="#cccccc", lw=0.6, ls="--"))


def draw_world(ax, world: World, comm_edges: bool = True) -> None:
    ids, pos = world.positions()
    d = world.params.d
    body = world.motion.collision_radius
    if comm_edges and len(ids) > 1:
        diff = pos[None, :, :] - pos[:, None, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        i, j = np.nonzero(np.triu(dist <= world.comm.radius, k=1))
        segs = np.stack([pos[i], pos[j]], axis=1)
        ax.add_collection(LineCollection(segs, colors="#dddddd", linewidths=0.4, zorder=1))
    for rid, (x, y) in zip(ids, pos):
        state = world.robots[rid].mem.state
        ax.add_patch(Circle((x, y), body, color=STATE_COLORS[state], zorder=2))
    if len(ids):
        lo, hi = pos.min(axis=0) - d, pos.max(axis=0) + d
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(hi[1], lo[1])  # rows grow downward, as in the bitmap
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def _legend(ax) -> None:
    handles = [plt.Line2D([], [], marker="o", ls="", color=c, label=s.value)
               for s, c in STATE_COLORS.items()]
    ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=7,
              frameon=False)


def write_frame(world: World, path: Path) -> None:
    """One SVG of robot positions coloured by state, with communication links."""
    fig, ax = plt.subplots(figsize=(6, 5))
    draw_world(ax, world)
    ax.set_title(f"tick {world.tick}", fontsize=9)
    _legend(ax)
    fig.tight_layout()
    _save(fig, path)


def write_final_shape(world: World, path: Path) -> None:
    """Final robot layout over the outline of each fragment's target gene."""
    fig, ax = plt.subplots(figsize=(6, 5))
    d = world.params.d
    for comp in fragments(world):
        mems = [world.robots[r].mem for r in comp]
        epoch = max(m.epoch for m in mems)
        anchor = min((m for m in mems if m.epoch == epoch and m.tag is not None),
                     key=lambda m: m.id, default=None)
        if anchor is None:
            continue
        home, robot = embed(anchor.tag, d), world.robots[anchor.id]
        _shape_outline(ax, anchor.gene, d, (robot.x - home.px, robot.y - home.py))
    draw_world(ax, world, comm_edges=False)
    ax.set_title(f"final layout, tick {world.tick}", fontsize=9)
    _legend(ax)
    fig.tight_layout()
    _save(fig, path)


def write_stable_fraction(samples: Sequence[tuple[int, float]], path: Path,
                          damage_ticks: Sequence[int] = ()) -> None:
    """Line plot of the fraction of Stable robots against tick."""
    fig, ax = plt.subplots(figsize=(5, 3))
    if samples:
        t, f = zip(*samples)
        ax.plot(t, f, color=STATE_COLORS[State.STABLE], lw=1.2)
    for t in damage_ticks:
        ax.axvline(t, color="#555555", lw=0.8, ls=":")
    ax.set_xlabel("tick")
    ax.set_ylabel("Stable fraction")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    _save(fig, path)
