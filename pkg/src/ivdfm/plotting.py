"""Figure rendering for experiment reports (PNG files next to the CSVs)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    # drop the software tag so reruns write identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_trajectories(path, F_true, recovered, title=""):
    """One panel per factor: truth against each model's matched estimate.

    ``recovered`` maps a model label to a (T, r) array already matched and
    rescaled to the true factors.
    """
    F_true = np.asarray(F_true)
    r = F_true.shape[1]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(r, 1, figsize=(7, 1.4 * r + 0.6), sharex=True, squeeze=False)
        for i, ax in enumerate(axes[:, 0]):
            ax.plot(F_true[:, i], color="black", lw=1.2, label="true")
            for label, F in recovered.items():
                ax.plot(np.asarray(F)[:, i], lw=0.9, alpha=0.85, label=label)
            ax.set_ylabel(f"f{i + 1}")
        axes[0, 0].legend(ncol=len(recovered) + 1, loc="upper right")
        axes[-1, 0].set_xlabel("t")
        if title:
            fig.suptitle(title)
        _save(fig, path)


def plot_metric_bars(path, aggregate, metrics=("mcc", "subspace", "smoothness", "trace_r2")):
    """Grouped bars of mean +- std per metric; ``aggregate[model][metric] = (mean, std)``."""
    models = list(aggregate)
    x = np.arange(len(metrics))
    width = 0.8 / max(len(models), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        for j, model in enumerate(models):
            mean = [aggregate[model][m][0] for m in metrics]
            std = [aggregate[model][m][1] for m in metrics]
            ax.bar(x + (j - (len(models) - 1) / 2) * width, mean, width, yerr=std, capsize=3, label=model)
        ax.set_xticks(x, metrics)
        ax.legend()
        _save(fig, path)


def plot_irf(path, irf_true, irf_hat, max_series=4):
    irf_true, irf_hat = np.asarray(irf_true), np.asarray(irf_hat)
    n = min(max_series, irf_true.shape[1])
    h = np.arange(len(irf_true))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n + 0.5, 2.4), squeeze=False)
        for i, ax in enumerate(axes[0]):
            ax.plot(h, irf_true[:, i], "k-", lw=1.2, label="true")
            ax.plot(h, irf_hat[:, i], "o--", ms=3, lw=0.9, label="model")
            ax.axhline(0.0, color="grey", lw=0.6)
            ax.set_title(f"y{i + 1}")
            ax.set_xlabel("h")
        axes[0, 0].legend()
        _save(fig, path)


def plot_forecast(path, history, target, quantiles, series=0):
    """Context, realised values and the 10-90 band for one series."""
    history, target, quantiles = np.asarray(history), np.asarray(target), np.asarray(quantiles)
    L, H = len(history), len(target)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 2.6))
        ax.plot(np.arange(L), history[:, series], color="black", lw=0.9, label="context")
        fut = np.arange(L, L + H)
        ax.plot(fut, target[:, series], color="black", lw=0.9, ls=":", label="realised")
        ax.fill_between(fut, quantiles[:, series, 0], quantiles[:, series, -1], alpha=0.3, label="10-90%")
        ax.plot(fut, quantiles[:, series, quantiles.shape[-1] // 2], lw=1.0, label="median")
        ax.legend(loc="upper left")
        _save(fig, path)
