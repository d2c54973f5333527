"""SVG figures for sweep analyses."""

import logging

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update(
    {
        "axes.labelsize": 9,
        "axes.spines.right": False,
        "axes.spines.top": False,
        "font.size": 9,
        "legend.fontsize": 8,
        "svg.hashsalt": "roadpatch",  # stable element ids between runs
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
    }
)
import matplotlib.pyplot as plt  # noqa: E402

from .attack import normalized_results, severity  # noqa: E402
from .metrics import InfractionLevel  # noqa: E402

logger = logging.getLogger(__package__)

LEVEL_COLORS = ("#4c9a2a", "#e3b505", "#e07a1f", "#b3261e")


def _save(figure, path):
    figure.tight_layout()
    figure.savefig(path, format="svg", metadata={"Date": None})
    plt.close(figure)
    logger.debug(f"wrote {path}")
    return path


def plot_objective(report, extrema, path):
    """Steering sum and normalized infraction sum per pattern id."""
    results = sorted(normalized_results(report.results), key=lambda r: r.pattern_id)
    ids = [result.pattern_id for result in results]
    figure, (top, bottom) = plt.subplots(2, 1, figsize=(6.5, 4.5), sharex=True)

    top.plot(ids, [result.steering_sum for result in results], color="#33658a", lw=1)
    top.scatter(
        [result.pattern_id for result in extrema.minima],
        [result.steering_sum for result in extrema.minima],
        color="#b3261e",
        zorder=3,
        label="objective extrema",
    )
    top.axhline(0.0, color="#999999", lw=0.5)
    top.set_ylabel("steering sum")
    top.legend(loc="best")

    bottom.plot(ids, [severity(result) for result in results], color="#55a630", lw=1)
    maxima_ids = {result.pattern_id for result in extrema.maxima}
    bottom.scatter(
        [result.pattern_id for result in results if result.pattern_id in maxima_ids],
        [severity(result) for result in results if result.pattern_id in maxima_ids],
        color="#b3261e",
        zorder=3,
        label="collision maxima",
    )
    bottom.set_xlabel("pattern id")
    bottom.set_ylabel("normalized infractions")
    bottom.legend(loc="best")
    return _save(figure, path)


def plot_histogram(histogram, grid, path):
    """Aggregated collision per pattern id and the robust parameter spread."""
    figure, (bars, spread) = plt.subplots(2, 1, figsize=(6.5, 4.5))
    bars.bar(range(len(histogram.totals)), histogram.totals, width=1.0, color="#33658a")
    bars.set_xlabel("pattern id")
    bars.set_ylabel("collision [kg m/s]")

    names = [name for name in ("position", "rotation", "gap") if name in histogram.ranges]
    for offset, name in enumerate(names):
        values = [getattr(grid[pattern_id], name) for pattern_id in histogram.robust_ids]
        spread.scatter(histogram.robust_ids, values, s=10, label=name, zorder=3 + offset)
    spread.set_xlabel("robust pattern id")
    spread.set_ylabel("parameter value")
    if names:
        spread.legend(loc="best")
    return _save(figure, path)


def plot_level_shares(summary, path):
    """Stacked shares of infraction levels per group."""
    labels = ["/".join(key) for key in summary]
    figure, axes = plt.subplots(figsize=(max(4.0, 0.7 * len(labels) + 2), 3.5))
    bottoms = [0.0] * len(labels)
    for level, color in zip(InfractionLevel, LEVEL_COLORS):
        heights = [100 * shares[level] for shares in summary.values()]
        axes.bar(labels, heights, bottom=bottoms, color=color, label=f"level {int(level)}")
        bottoms = [b + h for b, h in zip(bottoms, heights)]
    axes.set_ylabel("episodes [%] (peak level)")
    axes.tick_params(axis="x", labelrotation=60)
    axes.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0))
    return _save(figure, path)
