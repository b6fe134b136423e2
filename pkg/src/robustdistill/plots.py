"""Grouped-bar comparison of clean and robust accuracy across methods.

Bar heights equal the report values exactly; the underlying numbers are also
emitted as a tab-separated sidecar table next to the image.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import InvalidConfigError


def emit_plot(reports, radii, path):
    """Write a grouped bar chart (one group per radius plus a clean group).

    ``reports`` is a list of RobustnessReport-like objects; the legend follows
    their order. Returns ``(png_path, table_path)``.
    """
    radii = [float(r) for r in radii]
    if not radii:
        raise InvalidConfigError("radius list must be non-empty")
    if not reports:
        raise InvalidConfigError("need at least one report")
    for rep in reports:
        missing = [r for r in radii if r not in rep.robust]
        if missing:
            raise InvalidConfigError(f"report {rep.model_id!r} lacks radii {missing}")

    groups = ["clean"] + [f"{r:g}" for r in radii]
    series = {rep.model_id: [rep.clean_accuracy] + [rep.robust[r] for r in radii] for rep in reports}

    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(groups), 3.6))
    width = 0.8 / len(series)
    for i, (label, values) in enumerate(series.items()):
        xs = [g + i * width for g in range(len(groups))]
        ax.bar(xs, values, width=width, label=label)
    ax.set_xticks([g + 0.4 - width / 2 for g in range(len(groups))])
    ax.set_xticklabels(groups)
    ax.set_ylabel("accuracy")
    ax.set_xlabel("attack radius")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    fig.savefig(path)
    plt.close(fig)

    table_path = os.path.splitext(path)[0] + ".tsv"
    lines = ["\t".join(["series"] + groups)]
    for label, values in series.items():
        lines.append("\t".join([label] + [repr(v) for v in values]))
    with open(table_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path, table_path


def read_plot_table(table_path) -> dict:
    """Parse the sidecar table back into {series: {group: value}}."""
    with open(table_path) as f:
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    header = rows[0][1:]
    return {row[0]: {g: float(v) for g, v in zip(header, row[1:])} for row in rows[1:]}
