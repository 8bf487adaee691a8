"""Training-curve figures."""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = (
    ("mean_reward", "reward", "reward-curve"),
    ("kl", "KL to reference", "kl-curve"),
    ("mean_response_actions", "boxes per response", "actions-curve"),
)


def plot_curves(rows: Sequence[dict], path) -> None:
    """Write a three-panel SVG of reward, KL and boxes per response by step.

    Each line carries an SVG id (``reward-curve`` and so on) so the file can
    be inspected without a renderer. Output is byte-stable for equal input.
    """
    if not rows:
        raise ValueError("no curve rows to plot")
    steps = [r["step"] for r in rows]
    with plt.rc_context({"svg.hashsalt": "veason", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        for ax, (key, label, gid) in zip(axes, PANELS):
            (line,) = ax.plot(steps, [r[key] for r in rows], lw=1.2, color="C0")
            line.set_gid(gid)
            ax.set_xlabel("step")
            ax.set_title(label)
            ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
