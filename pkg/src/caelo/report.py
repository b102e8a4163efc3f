"""Figure rendering for the evaluation report."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .ingest import Trajectory  # noqa: E402


def trajectory_xy(traj: Trajectory):
    xs = [p.translation[0] for p in traj.poses]
    ys = [p.translation[1] for p in traj.poses]
    return xs, ys


def plot_trajectories(estimate: Trajectory, truth: Trajectory,
                      svg_path, csv_path=None) -> None:
    """Render both xy paths to an SVG and optionally dump them as CSV."""
    ex, ey = trajectory_xy(estimate)
    tx, ty = trajectory_xy(truth)
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(tx, ty, "-", color="0.4", label="truth")
    ax.plot(ex, ey, "-", color="tab:red", label="estimate")
    ax.scatter([tx[0]], [ty[0]], marker="o", color="k", zorder=3, s=20)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "est_x", "est_y", "truth_x", "truth_y"])
            for i, (a, b, c, d) in enumerate(zip(ex, ey, tx, ty)):
                writer.writerow([i, f"{a:.9f}", f"{b:.9f}",
                                 f"{c:.9f}", f"{d:.9f}"])


def plot_loss_history(history, svg_path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(1, len(history) + 1), history, "o-")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
