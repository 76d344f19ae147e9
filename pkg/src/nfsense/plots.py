"""Static SVG figures for single runs and campaign reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["svg.hashsalt"] = "nfsense"

_METHOD_STYLE = {
    "proposed": dict(color="tab:blue", marker="o"),
    "no-sns": dict(color="tab:orange", marker="s"),
    "random-sns": dict(color="tab:red", marker="^"),
    "known-sns": dict(color="tab:green", marker="d"),
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_vr_figure(b_hat: np.ndarray, b_true: np.ndarray, path) -> None:
    """Per-path visibility detection map: estimate vs. true blocked spans."""
    n_ant, n_paths = b_hat.shape
    fig, axes = plt.subplots(n_paths, 1, figsize=(8, 1.8 * n_paths), sharex=True)
    axes = np.atleast_1d(axes)
    idx = np.arange(1, n_ant + 1)
    for l, ax in enumerate(axes):
        blocked_true = b_true[:, l] == 0
        ax.fill_between(idx, 0, 1, where=blocked_true, color="0.85",
                        step="mid", label="true blockage")
        est = 1.0 - b_hat[:, l]
        ax.step(idx, est, where="mid", color="tab:blue", lw=1.2,
                label="estimated blocked")
        ax.set_ylim(-0.05, 1.1)
        ax.set_ylabel(f"path {l}")
        if l == 0:
            ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("antenna index")
    fig.suptitle("Blockage detection (1 = blocked)")
    fig.tight_layout()
    _save(fig, path)


def save_scatter_map(result, scene, path) -> None:
    """Estimated scatterer locations against the ground truth and the array."""
    fig, ax = plt.subplots(figsize=(6, 5))
    truth = np.array([p.position() for p in scene.paths])
    est = result.positions_xy()
    half = scene.geom.aperture / 2
    ax.plot([0, 0], [-half, half], "k-", lw=3, label="array")
    ax.scatter(truth[:, 0], truth[:, 1], marker="x", s=80, color="k", label="truth")
    ax.scatter(est[:, 0], est[:, 1], marker="o", s=60, facecolors="none",
               edgecolors="tab:blue", label="estimate")
    for l, (x, y) in enumerate(truth):
        ax.annotate(f"path {l}", (x, y), textcoords="offset points", xytext=(6, 6),
                    fontsize=8)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title("Scatterer locations")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_rmse_curves(report, path) -> None:
    """Location (left) and gain (right) RMSE versus SNR, one line per method."""
    snrs = sorted(report.snr_points())
    fig, (ax_loc, ax_gain) = plt.subplots(1, 2, figsize=(10, 4))
    for method in report.methods():
        style = _METHOD_STYLE.get(method, dict(marker="."))
        loc = [report.value(s, method, "location_rmse") for s in snrs]
        gain = [report.value(s, method, "gain_rmse") for s in snrs]
        ax_loc.semilogy(snrs, loc, label=method, **style)
        ax_gain.semilogy(snrs, gain, label=method, **style)
    ax_loc.set_xlabel("SNR (dB)")
    ax_loc.set_ylabel("location RMSE (m)")
    ax_gain.set_xlabel("SNR (dB)")
    ax_gain.set_ylabel("gain RMSE")
    for ax in (ax_loc, ax_gain):
        ax.grid(alpha=0.3, which="both")
    ax_loc.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
