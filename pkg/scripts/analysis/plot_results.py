# scripts/analysis/plot_results.py
"""
Render the exported metrics of one run: density heatmap, delay against
spawn position, active-particle curve and the minimum-distance report.

Usage: python scripts/analysis/plot_results.py output/crossing [--show]
"""

import sys
import os
import json

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

import numpy as np
import pandas as pd

from utils.logger import get_logger, setup_logging

logger = get_logger(__name__)


def load_run(directory: str) -> dict:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    return {
        "manifest": manifest,
        "particles": pd.read_csv(os.path.join(directory, "particles.csv")),
        "heatmap": pd.read_csv(os.path.join(directory, "heatmap.csv")),
        "series": pd.read_csv(os.path.join(directory, "series.csv")),
        "mde": pd.read_csv(os.path.join(directory, "mde.csv")),
    }


def heatmap_array(heatmap: pd.DataFrame, nx: int, ny: int) -> np.ndarray:
    values = np.zeros((ny, nx))
    values[heatmap["j"].to_numpy() - 1, heatmap["i"].to_numpy() - 1] = heatmap["value"].to_numpy()
    return values


def plot_run(directory: str, show: bool = False) -> str:
    import matplotlib
    if not show:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = load_run(directory)
    grid = run["manifest"]["grid"]
    scene = run["manifest"]["scene"]
    width = grid["nx"] * grid["dx"]
    height = grid["ny"] * grid["dy"]

    fig, axes = plt.subplots(2, 2, figsize=(12, 10))

    ax = axes[0, 0]
    image = ax.imshow(heatmap_array(run["heatmap"], grid["nx"], grid["ny"]), origin="lower",
                      extent=(0, width, 0, height), cmap="magma")
    for x0, y0, x1, y1 in scene.get("obstacles", []):
        ax.add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, color="grey"))
    fig.colorbar(image, ax=ax, label="integrated log(1 + density) [s]")
    ax.set_title("Density heatmap")

    ax = axes[0, 1]
    particles = run["particles"].dropna(subset=["delay"])
    scatter = ax.scatter(particles["spawn_x"], particles["spawn_y"], c=particles["delay"],
                         cmap="viridis", vmin=-0.5, vmax=1.0, s=6)
    ax.set_xlim(0, width)
    ax.set_ylim(0, height)
    fig.colorbar(scatter, ax=ax, label="relative delay")
    ax.set_title("Delay by spawn position")

    ax = axes[1, 0]
    series = run["series"]
    ax.plot(series["t"], series["n_active"], label="active")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("particles")
    ax2 = ax.twinx()
    ax2.plot(series["t"], series["max_density"], color="tab:red", alpha=0.6, label="max density")
    ax2.set_ylabel("max density [1/m^2]")
    ax.set_title("Crowd in the scene")

    ax = axes[1, 1]
    mde = run["mde"]
    ax.plot(mde["radius"], mde["count"], marker="o")
    ax.set_xlabel("radius [m]")
    ax.set_ylabel("particles with a neighbour closer than radius")
    ax.set_title("Minimum-distance report")

    fig.tight_layout()
    target = os.path.join(directory, "summary.png")
    fig.savefig(target, dpi=120)
    logger.info(f"🖼️  Figure written to {target}")
    if show:
        plt.show()
    plt.close(fig)
    return target


if __name__ == '__main__':
    setup_logging(log_to_file=False)
    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(1)
    plot_run(sys.argv[1], show="--show" in sys.argv[2:])
