"""Figure rendering for the report paths.

matplotlib is imported lazily inside each function so commands that never
render stay fast; the Agg backend is forced so nothing needs a display.
Saved PNGs drop the Software metadata chunk to keep bytes stable across
matplotlib versions.
"""

from __future__ import annotations

import numpy as np

RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update(RC)
    return plt


def save_figure(fig, path) -> None:
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})


def plot_layer_histogram(values: np.ndarray, stats, path) -> None:
    """Pooled value histogram with the fitted clip marked."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    pooled = np.asarray(values, dtype=np.float64).reshape(-1)
    nonzero = pooled[pooled != 0.0]
    ax.hist(nonzero, bins=80, color="#4878a8", log=True)
    ax.axvline(stats.clip_hi, color="#c44e52", linestyle="--",
               label=f"clip at {stats.clip_hi:.4g}")
    ax.set_xlabel("activation value (nonzero)")
    ax.set_ylabel("count")
    ax.set_title(f"layer {stats.layer_id}: {stats.zero_fraction:.1%} zeros, "
                 f"{stats.num_samples} samples")
    ax.legend()
    save_figure(fig, path)
    plt.close(fig)


def plot_plane_fill(stats, path) -> None:
    """Occupancy of each bit plane after initial quantization, LSB first."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    planes = np.arange(1, stats.plane_fill.size + 1)
    ax.bar(planes, stats.plane_fill, color="#4878a8")
    ax.set_xticks(planes)
    ax.set_xlabel("bit plane (1 = least significant)")
    ax.set_ylabel("fraction of ones")
    ax.set_title(f"layer {stats.layer_id}: bit-plane occupancy")
    save_figure(fig, path)
    plt.close(fig)


def plot_sweep_trace(trace, threshold_db: float, path) -> None:
    """Loss and kept rate along the penalty grid, chosen point marked."""
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.5))
    lams = [p.lam for p in trace.points]
    losses = [p.psnr_loss_db for p in trace.points]
    rates = [p.rate for p in trace.points]
    ax1.plot(lams, losses, marker="o", ms=3, color="#4878a8")
    ax1.axhline(threshold_db, color="#c44e52", linestyle="--",
                label=f"threshold {threshold_db:g} dB")
    ax1.set_ylabel("max PSNR loss (dB)")
    ax1.legend()
    ax2.step(lams, rates, where="post", color="#55a868")
    ax2.set_ylabel("kept planes")
    ax2.set_xlabel("penalty")
    if lams and lams[0] > 0:
        ax1.set_xscale("log")
    if 0 <= trace.chosen < len(trace.points):
        p = trace.points[trace.chosen]
        ax1.plot([p.lam], [p.psnr_loss_db], marker="*", ms=12, color="#dd8452")
        ax2.plot([p.lam], [p.rate], marker="*", ms=12, color="#dd8452")
    ax1.set_title(f"layer {trace.layer_id}: penalty sweep"
                  + (" (threshold unmet)" if trace.threshold_unmet else ""))
    save_figure(fig, path)
    plt.close(fig)


def plot_rate_distortion(rows, layer_id: int, path) -> None:
    """Best-support PSNR against plain truncation at every rate."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    rates = [r.rate for r in rows]
    ax.plot(rates, [r.psnr_trunc_db for r in rows], marker="s", ms=4,
            color="#937860", label="truncation")
    ax.plot(rates, [r.psnr_oracle_db for r in rows], marker="o", ms=4,
            color="#4878a8", label="best support")
    ax.set_xticks(rates)
    ax.set_xlabel("kept planes")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"layer {layer_id}: rate-distortion")
    ax.legend()
    save_figure(fig, path)
    plt.close(fig)


def plot_efficiency(rows, path) -> None:
    """Cost model: operations and activation traffic against kept bits."""
    plt = _pyplot()
    fig, ax1 = plt.subplots()
    bits = [r.bits for r in rows]
    ax1.plot(bits, [r.ops_b for r in rows], marker="o", ms=4, color="#4878a8",
             label="ops (B)")
    ax1.set_xlabel("activation bits")
    ax1.set_ylabel("bit operations (B)", color="#4878a8")
    ax2 = ax1.twinx()
    ax2.plot(bits, [r.mem_mb for r in rows], marker="s", ms=4, color="#c44e52",
             label="memory (MB)")
    ax2.set_ylabel("activation memory (MB)", color="#c44e52")
    ax2.grid(False)
    ax1.set_title("efficiency against kept activation bits")
    save_figure(fig, path)
    plt.close(fig)
