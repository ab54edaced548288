"""Report figures, rendered off-screen to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def convergence_traces(traces: dict[int, list[list[float]]], path, tolerance=None) -> Path:
    """One panel per target index; one line per seed (semilog error)."""
    keys = sorted(traces)
    fig, axes = plt.subplots(1, len(keys), figsize=(3.2 * len(keys), 3.0), squeeze=False)
    for ax, n0 in zip(axes[0], keys):
        for trace in traces[n0]:
            ax.semilogy(np.maximum(trace, 1e-16), lw=0.8)
        if tolerance:
            ax.axhline(tolerance, color="k", ls=":", lw=0.8)
        ax.set_title(f"|±{2 * n0}ħk⟩")
        ax.set_xlabel("iteration")
    axes[0][0].set_ylabel("terminal error")
    return _save(fig, path)


def energy_bars(n0s, max_u, max_u_std, area, area_std, path) -> Path:
    """Peak intensity and time-integrated intensity per target, with seed spread."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    x = np.arange(len(n0s))
    labels = [str(2 * n) for n in n0s]
    a1.bar(x, max_u, yerr=max_u_std, color="tab:blue")
    a1.set_ylabel("max u/ω_r")
    a2.bar(x, area, yerr=area_std, color="tab:orange")
    a2.set_ylabel("∫u dt")
    for ax in (a1, a2):
        ax.set_xticks(x, labels)
        ax.set_xlabel("target momentum (ħk)")
    return _save(fig, path)


def pulse_plot(pulse, path, title="") -> Path:
    fig, ax = plt.subplots(figsize=(6, 2.6))
    t = pulse.grid.times
    ax.step(t, pulse.values[:, 0], where="post", lw=0.8)
    ax.set_xlabel("ω_r t")
    ax.set_ylabel("u/ω_r")
    ax.set_title(title)
    return _save(fig, path)


def _span(values):
    lo, hi = float(values.min()), float(values.max())
    # a degenerate interval still needs a visible cell
    return (lo - 0.05, hi + 0.05) if hi == lo else (lo, hi)


def grid_heatmap(report, path, title="") -> Path:
    """Terminal error over the (k/k0, gamma) verification grid."""
    nd, ng = report.grid_shape
    pts = np.array(report.grid)
    errors = np.asarray(report.terminal_errors).reshape(nd, ng)
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    extent = (*_span(pts[:, 1]), *_span(pts[:, 0]))
    im = ax.imshow(errors, origin="lower", aspect="auto", extent=extent, vmin=0, vmax=1, cmap="viridis")
    fig.colorbar(im, ax=ax, label="terminal error")
    ax.set_xlabel("γ")
    ax.set_ylabel("k/k₀")
    ax.set_title(title)
    return _save(fig, path)


def filter_curves(curves: dict[str, tuple[np.ndarray, np.ndarray]], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    for label, (cutoffs, probs) in curves.items():
        ax.plot(cutoffs, probs, label=label)
    ax.set_xlabel("cutoff / f_s")
    ax.set_ylabel("target probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    return _save(fig, path)


def comparison_bars(labels, legendre, sampling, path) -> Path:
    """Mean grid error, Legendre designs against matched sampling designs."""
    fig, ax = plt.subplots(figsize=(5, 3))
    x = np.arange(len(labels))
    ax.bar(x - 0.2, legendre, width=0.4, label="Legendre")
    ax.bar(x + 0.2, sampling, width=0.4, label="sampling")
    ax.set_xticks(x, labels)
    ax.set_ylabel("mean error")
    ax.legend(fontsize=8)
    return _save(fig, path)
