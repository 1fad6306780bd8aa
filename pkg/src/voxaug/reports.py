"""Report artifacts: loss-curve and BEV valid-region figures plus CSV/PPM."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .compose import STATE_INVALID, STATE_OCCLUDED, STATE_VALID, ValidRegionMap
from .images import write_ppm

STATE_COLORS = {
    STATE_INVALID: (0.85, 0.2, 0.15),
    STATE_VALID: (0.25, 0.7, 0.3),
    STATE_OCCLUDED: (0.55, 0.55, 0.6),
}


def plot_loss_curve(trace, path) -> None:
    """Training losses vs iteration, log y-scale."""
    rows = np.array([(r[0], r[1], r[2], r[3], r[4]) for r in trace])
    fig, ax = plt.subplots(figsize=(7, 4))
    for col, label in ((1, "total"), (2, "color"), (3, "depth"), (4, "gc")):
        if np.any(rows[:, col] > 0):
            ax.plot(rows[:, 0], rows[:, col], label=label, linewidth=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_valid_region(region: ValidRegionMap, path) -> None:
    """BEV heatmap of densities with the valid/invalid/occluded states."""
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    extent = [region.origin[0],
              region.origin[0] + region.shape[0] * region.cell_size[0],
              region.origin[1],
              region.origin[1] + region.shape[1] * region.cell_size[1]]
    for ax, data, title in ((axes[0], region.max_density, "max density"),
                            (axes[1], region.mean_density, "mean density")):
        im = ax.imshow(data.T, origin="lower", extent=extent, aspect="equal")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.8)
    if region.state is not None:
        img = np.zeros((*region.shape, 3))
        for s, c in STATE_COLORS.items():
            img[region.state == s] = c
        axes[2].imshow(img.transpose(1, 0, 2), origin="lower", extent=extent,
                       aspect="equal")
        axes[2].set_title("state (green=valid, red=invalid, gray=occluded)")
    for ax in axes:
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def valid_region_ppm(region: ValidRegionMap, path) -> None:
    """Small PPM visualization of the BEV state grid."""
    img = np.zeros((*region.shape, 3))
    for s, c in STATE_COLORS.items():
        img[region.state == s] = c
    # image rows run top-to-bottom = +y to -y
    write_ppm(path, img.transpose(1, 0, 2)[::-1])


def valid_region_csv(region: ValidRegionMap, path) -> None:
    names = {STATE_INVALID: "invalid", STATE_VALID: "valid",
             STATE_OCCLUDED: "occluded"}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i", "j", "x_center", "y_center", "max_density",
                    "mean_density", "state"])
        for i in range(region.shape[0]):
            for j in range(region.shape[1]):
                cx, cy = region.cell_center(i, j)
                state = "" if region.state is None else names[int(region.state[i, j])]
                w.writerow([i, j, f"{cx:.3f}", f"{cy:.3f}",
                            f"{region.max_density[i, j]:.6g}",
                            f"{region.mean_density[i, j]:.6g}", state])
