"""Figure rendering for evaluation reports.

Each report-emitting CLI path can drop PNG figures next to the delimited
output: calibration-error convergence curves, median NMSE per method, and a
sweep heatmap over (array length, codebook count).
"""

import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)


def save_convergence_figure(report, path):
    """Per-iteration calibration MSE, one curve per row that carries a trace."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    seen = set()
    for row in report.rows:
        if not row.j_trace:
            continue
        label = row.method if row.method not in seen else None
        seen.add(row.method)
        ax.plot(range(1, len(row.j_trace) + 1), row.j_trace, alpha=0.6, label=label)
    if not seen:
        plt.close(fig)
        log.info("no calibration traces to plot; skipping %s", path)
        return False
    ax.set_xlabel("iteration")
    ax.set_ylabel("quantization MSE (normalized domain)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def save_nmse_figure(report, path):
    """Median NMSE per method, grouped by tensor."""
    medians = report.aggregates.get("median_nmse_by_tensor_method", {})
    if not medians:
        return False
    tensors = sorted({k.split("|")[0] for k in medians})
    methods = sorted({k.split("|")[1] for k in medians})
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(tensors)), 4.5))
    width = 0.8 / len(methods)
    for j, m in enumerate(methods):
        xs = [i + j * width for i in range(len(tensors))]
        ys = [medians.get(f"{t}|{m}", float("nan")) for t in tensors]
        ax.bar(xs, ys, width=width, label=m)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(tensors))])
    ax.set_xticklabels(tensors, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("median NMSE")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def save_sweep_figure(cells, path):
    """NMSE heatmap over (array length, codebook count), one panel per block length."""
    lbs = sorted({c.block_len for c in cells})
    fig, axes = plt.subplots(1, len(lbs), figsize=(4.5 * len(lbs), 4), squeeze=False)
    for ax, lb in zip(axes[0], lbs):
        sub = [c for c in cells if c.block_len == lb]
        las = sorted({c.array_len for c in sub})
        ncs = sorted({c.num_codebooks for c in sub})
        grid = [[float("nan")] * len(ncs) for _ in las]
        for c in sub:
            grid[las.index(c.array_len)][ncs.index(c.num_codebooks)] = c.nmse
        im = ax.imshow(grid, aspect="auto")
        ax.set_xticks(range(len(ncs)), [str(n) for n in ncs])
        ax.set_yticks(range(len(las)), [str(a) for a in las])
        ax.set_xlabel("codebooks")
        ax.set_ylabel("array length")
        ax.set_title(f"block length {lb}")
        for i in range(len(las)):
            for j in range(len(ncs)):
                ax.text(j, i, f"{grid[i][j]:.2e}", ha="center", va="center", fontsize=7)
        fig.colorbar(im, ax=ax, label="NMSE")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True
