"""Matplotlib figures written next to the CSV reports.

Uses the non-interactive Agg backend; every function saves one PNG and
returns its path.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    # fixed metadata keeps reruns byte-identical
    "svg.hashsalt": "dualpath",
}

COLORS = {"rectifier": "#1f77b4", "dual": "#d62728", "tanh": "#2ca02c"}


def _figure(width=4.0, height=3.0):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path):
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_angle_histogram(counts, edges, path, title=None):
    fig, ax = _figure()
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", color="0.4", edgecolor="w")
    ax.set_xlim(0, 180)
    ax.set_xlabel("angle between atoms (degrees)")
    ax.set_ylabel("pairs")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_activation_trace(trace, path, title=None):
    """Unit and companion pre-activations (dashed) with the combined response."""
    fig, ax = _figure(4.5, 3.0)
    x = np.arange(len(trace))
    ax.plot(x, trace[:, 0], "--", lw=0.8, label="unit pre-activation")
    ax.plot(x, trace[:, 1], "--", lw=0.8, label="companion pre-activation")
    ax.plot(x, trace[:, 2], lw=1.0, color="k", label="combined output")
    ax.axhline(0, color="0.7", lw=0.5)
    ax.set_xlabel("test patch (sorted)")
    ax.set_ylabel("activation")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_rmse_vs_width(runs, path):
    """Mean test RMSE over seeds against hidden width, one line per variant."""
    fig, ax = _figure()
    variants = sorted({r["variant"] for r in runs})
    for v in variants:
        widths = sorted({r["width"] for r in runs if r["variant"] == v})
        means = [np.mean([r["test_rmse"] for r in runs
                          if r["variant"] == v and r["width"] == w]) for w in widths]
        ax.plot(widths, means, "o-", color=COLORS.get(v), label=v)
    ax.set_xlabel("hidden units")
    ax.set_ylabel("test patch RMSE")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_loss_curve(losses, path, label=None):
    fig, ax = _figure()
    ax.semilogy(np.arange(len(losses)), losses, lw=0.8, label=label)
    ax.set_xlabel("minibatch")
    ax.set_ylabel("training loss")
    if label:
        ax.legend(frameon=False)
    return _save(fig, path)


def plot_psnr_table(table, path):
    """Per-image PSNR against noise level, with the average in bold."""
    fig, ax = _figure(4.5, 3.2)
    for name, row in zip(table.images, table.values):
        ax.plot(table.sigmas, row, lw=0.6, color="0.6")
    ax.plot(table.sigmas, table.averages, "o-", lw=1.5, color="k", label="average")
    ax.set_xlabel("noise sigma (0-255 scale)")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_activation_shapes(path, thresholds=(1.0, -1.0), span=3.0):
    """The dual-pathway activation for a few thresholds."""
    from .nn import ActivationKind, activation_eval

    fig, axes = plt.subplots(1, len(thresholds), figsize=(2.6 * len(thresholds), 2.4))
    x = np.linspace(-span, span, 601)
    for ax, t in zip(np.atleast_1d(axes), thresholds):
        y = activation_eval(ActivationKind.dual(np.array([t])), x[:, None])[:, 0]
        ax.plot(x, y, color="k")
        ax.axhline(0, color="0.7", lw=0.5)
        ax.axvline(0, color="0.7", lw=0.5)
        ax.set_title(f"t = {t:g}")
    return _save(fig, path)
