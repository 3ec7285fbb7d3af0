"""
Optional matplotlib figures for crackscan
"""
import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from crackscan.stats.multitest import EmpiricalNull
from crackscan.volume.io import slice_image
from crackscan.volume.volume import BinaryVolume, ScalarVolume

logger = logging.getLogger(__name__)

# Check if matplotlib is available
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False


def plot_null_histogram(
    null: EmpiricalNull,
    save_path: Path,
    bins: int = 30,
    observed: Optional[np.ndarray] = None,
    figsize: Tuple[int, int] = (6, 4),
) -> Optional[Path]:
    """
    Histogram of the empirical null statistics

    Args:
        null: The empirical null
        save_path: PNG destination
        bins: Number of histogram bins
        observed: Statistics of a tested volume, drawn on top when given
        figsize: Figure size in inches

    Returns:
        The written path, or None without matplotlib
    """
    if not HAS_MATPLOTLIB:
        logger.warning("Matplotlib is required for figures. Install with pip install crackscan[viz]")
        return None

    fig, ax = plt.subplots(figsize=figsize)
    ax.hist(null.values, bins=bins, color="steelblue", alpha=0.8, label="null")
    if observed is not None:
        ax.hist(observed, bins=bins, color="firebrick", alpha=0.5, label="tested")
        ax.legend()
    ax.set_xlabel("T")
    ax.set_ylabel("windows")
    ax.set_title(f"Empirical null (g={null.g}, u={null.u}, {null.size} windows)")
    save_path = Path(save_path)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(save_path, bbox_inches="tight")
    plt.close(fig)
    return save_path


def plot_overlay(
    volume: ScalarVolume,
    mask: BinaryVolume,
    axis: str,
    index: int,
    save_path: Path,
    figsize: Tuple[int, int] = (6, 6),
) -> Optional[Path]:
    """Gray slice with the flagged region drawn as a translucent red layer"""
    if not HAS_MATPLOTLIB:
        logger.warning("Matplotlib is required for figures. Install with pip install crackscan[viz]")
        return None

    gray = slice_image(volume, axis, index)
    flags = slice_image(mask, axis, index) > 0
    fig, ax = plt.subplots(figsize=figsize)
    ax.imshow(gray, cmap="gray", vmin=0, vmax=255)
    ax.imshow(np.ma.masked_where(~flags, flags), cmap="autumn", alpha=0.4)
    ax.set_title(f"{axis} = {index}")
    ax.axis("off")
    save_path = Path(save_path)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(save_path, bbox_inches="tight")
    plt.close(fig)
    return save_path
