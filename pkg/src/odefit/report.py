"""Plot-data extraction and figure rendering for benchmark results.

Every figure id maps to one long-format CSV plus one rendered PNG.  The CSV
is the primary artifact -- it carries every row needed to regenerate the
plot with any tool -- and the PNG is drawn from exactly those rows.  Most
figures use the three-column schema ``x,group,value``; ``s3_success`` uses
``method,sigma,n_train,setup,rate`` and ``s1_table`` uses
``method,setup,mse``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .bench import EmptyGroup, ScenarioRecord, aggregate

SETUP_NAMES = ("ex_it", "ex_oot", "ex_ood")

FIGURE_IDS = (
    "s1_table",
    "s2_ex_it", "s2_ex_oot", "s2_ex_ood",
    "s3_success", "s3_box_10", "s3_box_500",
    "s4_ood", "s4_exit", "s4_oot", "s4_time",
)

# figure id -> (scenario, record field holding the plotted value)
_S2_VALUES = {"s2_ex_it": "mse_ex_it", "s2_ex_oot": "mse_ex_oot",
              "s2_ex_ood": "mse_ex_ood"}
_S4_VALUES = {"s4_ood": "mse_ex_ood", "s4_exit": "mse_ex_it",
              "s4_oot": "mse_ex_oot", "s4_time": "wall_time_s"}


def _only(records, scenario: str, figure_id: str) -> list[ScenarioRecord]:
    got = [r for r in records if r.scenario == scenario]
    if not got:
        raise EmptyGroup(f"figure {figure_id}: no {scenario} records in results")
    return got


def _sorted_rows(rows):
    return sorted(rows, key=lambda row: tuple(str(v) for v in row))


def build_figure(records, figure_id: str):
    """Long-format plot data for one figure: ``(columns, rows)``.

    Raises EmptyGroup when the results contain no matching records and
    ValueError for an unknown figure id.
    """
    if figure_id == "s1_table":
        recs = _only(records, "S1", figure_id)
        rows = []
        for setup in SETUP_NAMES:
            for grp in aggregate(recs, ("method",), "median", f"mse_{setup}"):
                rows.append((grp["method"], setup, grp["value"]))
        return ("method", "setup", "mse"), _sorted_rows(rows)

    if figure_id in _S2_VALUES:
        recs = _only(records, "S2", figure_id)
        value = _S2_VALUES[figure_id]
        rows = [(r.n_train, r.method, getattr(r, value)) for r in recs]
        return ("x", "group", "value"), _sorted_rows(rows)

    if figure_id == "s3_success":
        recs = _only(records, "S3", figure_id)
        rows = []
        for setup in SETUP_NAMES:
            grouped = aggregate(recs, ("method", "sigma", "n_train"),
                                "success_rate", f"success_{setup}")
            for grp in grouped:
                rows.append((grp["method"], grp["sigma"], grp["n_train"],
                             setup, grp["value"]))
        return ("method", "sigma", "n_train", "setup", "rate"), _sorted_rows(rows)

    if figure_id in ("s3_box_10", "s3_box_500"):
        n_want = int(figure_id.rsplit("_", 1)[1])
        recs = [r for r in _only(records, "S3", figure_id) if r.n_train == n_want]
        if not recs:
            raise EmptyGroup(f"figure {figure_id}: no S3 records with N={n_want}")
        rows = [(r.sigma, r.method, r.mse_ex_it) for r in recs]
        return ("x", "group", "value"), _sorted_rows(rows)

    if figure_id in _S4_VALUES:
        recs = [r for r in _only(records, "S4", figure_id) if r.method == "chaos"]
        if not recs:
            raise EmptyGroup(f"figure {figure_id}: no S4 chaos records")
        value = _S4_VALUES[figure_id]
        rows = [(r.n_train, f"{r.basis_variant}|sigma={r.sigma:g}", getattr(r, value))
                for r in recs]
        return ("x", "group", "value"), _sorted_rows(rows)

    raise ValueError(
        f"unknown figure id {figure_id!r}; valid ids: {', '.join(FIGURE_IDS)}")


def write_figure_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# rendering


def _axes_grid(plt, n_rows, n_cols, title):
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(3.2 * n_cols + 1.2, 2.6 * n_rows + 0.8),
                             squeeze=False)
    fig.suptitle(title)
    return fig, axes

def _style(i):
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#ff7f0e")
    markers = ("o", "s", "^", "d", "v", "x")
    return {"color": colors[i % len(colors)], "marker": markers[i % len(markers)]}


def _median_lines(ax, rows, logy=True):
    """One median-vs-x line per group, raw points behind it.

    Infinite values (diverged models) are left out of the drawing; a log
    y-axis is only used when something positive remains to put on it.
    """
    groups = sorted({row[1] for row in rows})
    any_positive = False
    for i, grp in enumerate(groups):
        pts = [(row[0], row[2]) for row in rows if row[1] == grp]
        xs = sorted({p[0] for p in pts})
        med = []
        for x in xs:
            vals = [p[1] for p in pts if p[0] == x]
            finite = [v for v in vals if np.isfinite(v)]
            med.append(np.median(finite) if finite else np.nan)
        sty = _style(i)
        raw_x = [p[0] for p in pts if np.isfinite(p[1])]
        raw_y = [p[1] for p in pts if np.isfinite(p[1])]
        any_positive = any_positive or any(v > 0 for v in raw_y)
        ax.plot(raw_x, raw_y, linestyle="none", alpha=0.25, **sty)
        ax.plot(xs, med, label=grp, **sty)
    ax.set_xscale("log")
    if logy and any_positive:
        ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)


def _grouped_boxes(ax, rows):
    """Boxplots of value per x category, side by side per group."""
    xs = sorted({row[0] for row in rows})
    groups = sorted({row[1] for row in rows})
    width = 0.8 / max(1, len(groups))
    any_positive = False
    for i, grp in enumerate(groups):
        data, positions = [], []
        for j, x in enumerate(xs):
            vals = [row[2] for row in rows
                    if row[0] == x and row[1] == grp and np.isfinite(row[2])]
            if vals:
                data.append(vals)
                positions.append(j + (i - (len(groups) - 1) / 2) * width)
        if not data:
            continue
        any_positive = any_positive or any(v > 0 for vals in data for v in vals)
        sty = _style(i)
        box = ax.boxplot(data, positions=positions, widths=width * 0.9,
                         patch_artist=True, manage_ticks=False)
        for patch in box["boxes"]:
            patch.set_facecolor(sty["color"])
            patch.set_alpha(0.6)
        for med in box["medians"]:
            med.set_color("black")
        ax.plot([], [], color=sty["color"], label=grp)
    ax.set_xticks(range(len(xs)))
    ax.set_xticklabels([f"{x:g}" for x in xs])
    if any_positive:
        ax.set_yscale("log")
    ax.grid(True, axis="y", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)


def render_figure(path, figure_id: str, columns, rows) -> None:
    """Draw one PNG from the figure's own CSV rows."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if figure_id == "s1_table":
        methods = sorted({row[0] for row in rows})
        cells = {(row[0], row[1]): row[2] for row in rows}
        fig, ax = plt.subplots(figsize=(6.0, 1.0 + 0.4 * len(methods)))
        ax.axis("off")
        table = ax.table(
            cellText=[[f"{cells[(m, s)]:.3g}" for s in SETUP_NAMES]
                      for m in methods],
            rowLabels=methods, colLabels=list(SETUP_NAMES), loc="center")
        table.scale(1.0, 1.4)
        fig.suptitle("in-training / out-of-time / out-of-domain MSE")
    elif figure_id in _S2_VALUES:
        fig, axes = _axes_grid(plt, 1, 1, f"{figure_id}: MSE vs training set size")
        _median_lines(axes[0][0], rows)
        axes[0][0].set_xlabel("N")
        axes[0][0].set_ylabel("MSE")
    elif figure_id == "s3_success":
        setups = SETUP_NAMES
        n_vals = sorted({row[2] for row in rows})
        fig, axes = _axes_grid(plt, len(setups), len(n_vals),
                               "success rate vs noise")
        methods = sorted({row[0] for row in rows})
        for r, setup in enumerate(setups):
            for c, n in enumerate(n_vals):
                ax = axes[r][c]
                sigmas = sorted({row[1] for row in rows})
                for i, m in enumerate(methods):
                    ys = []
                    for s in sigmas:
                        hit = [row[4] for row in rows
                               if row[0] == m and row[1] == s
                               and row[2] == n and row[3] == setup]
                        ys.append(hit[0] if hit else np.nan)
                    ax.plot(range(len(sigmas)), ys, label=m, **_style(i))
                ax.set_ylim(-0.05, 1.05)
                ax.set_xticks(range(len(sigmas)))
                ax.set_xticklabels([f"{s:g}" for s in sigmas], fontsize=7)
                ax.set_title(f"{setup}, N={n}", fontsize=8)
                ax.grid(True, alpha=0.3)
                if r == 0 and c == 0:
                    ax.legend(fontsize=7)
        fig.supxlabel("noise level")
        fig.supylabel("success rate")
    elif figure_id in ("s3_box_10", "s3_box_500"):
        fig, axes = _axes_grid(plt, 1, 1,
                               f"{figure_id}: in-training MSE vs noise")
        _grouped_boxes(axes[0][0], rows)
        axes[0][0].set_xlabel("noise level")
        axes[0][0].set_ylabel("MSE (ex-it)")
    elif figure_id in _S4_VALUES:
        sigmas = sorted({float(row[1].rsplit("=", 1)[1]) for row in rows})
        fig, axes = _axes_grid(plt, 1, len(sigmas),
                               f"{figure_id}: orthonormal vs monomial")
        for c, s in enumerate(sigmas):
            sub = [(row[0], row[1].split("|")[0], row[2]) for row in rows
                   if float(row[1].rsplit("=", 1)[1]) == s]
            ax = axes[0][c]
            _median_lines(ax, sub, logy=figure_id != "s4_time")
            ax.set_title(f"sigma={s:g}", fontsize=8)
            ax.set_xlabel("N")
        axes[0][0].set_ylabel("wall time [s]" if figure_id == "s4_time" else "MSE")
    else:
        raise ValueError(f"unknown figure id {figure_id!r}")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_figure(records, figure_id: str, out_dir, render: bool = True) -> list:
    """Write <figure_id>.csv (and .png) under out_dir; returns the paths."""
    columns, rows = build_figure(records, figure_id)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{figure_id}.csv"
    write_figure_csv(csv_path, columns, rows)
    paths = [csv_path]
    if render:
        png_path = out_dir / f"{figure_id}.png"
        render_figure(png_path, figure_id, columns, rows)
        paths.append(png_path)
    return paths
