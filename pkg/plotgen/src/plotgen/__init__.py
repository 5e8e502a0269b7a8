"""Figure generation for beamforming sweep results.

Consumes the CSV files produced by the solver toolkit (layer sweeps,
error sweeps, timing sweeps) and renders one matplotlib figure per
invocation.  The module never imports the solver package: the CSV
schema is the only contract between the two.

Three figure kinds are supported:

``layers``
    robust WSR versus iteration / layer budget, columns
    ``solver,x,robust_wsr,eval_mode,seed``.
``error``
    robust WSR versus channel error variance, columns
    ``solver,sigma_h2,robust_wsr,eval_mode,seed``.
``timing``
    seconds per channel versus problem size on a log scale, columns
    ``solver,size,rep,seconds``.  Repetitions are averaged per
    (solver, size) point; this is the only aggregation performed here.

Layer and error CSVs carry rows for every evaluation mode the sweep
emitted, so those kinds filter to a single ``eval_mode`` (default
``shannon``) before plotting.  Timing CSVs have no mode column.

Input files are opened read-only and never modified.  Identical inputs
produce identical plotted series; the optional series dump writes the
exact numbers behind the figure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from statistics import fmean


class PlotDataError(Exception):
    """Raised when an input CSV cannot back the requested figure."""


@dataclass(frozen=True)
class KindSpec:
    """Column layout and axis styling for one figure kind."""

    x_column: str
    y_column: str
    x_label: str
    y_label: str
    mode_filtered: bool
    log_y: bool
    aggregate_reps: bool


KINDS = {
    "layers": KindSpec(
        x_column="x",
        y_column="robust_wsr",
        x_label="iteration / layer budget",
        y_label="robust WSR (bit/s/Hz)",
        mode_filtered=True,
        log_y=False,
        aggregate_reps=False,
    ),
    "error": KindSpec(
        x_column="sigma_h2",
        y_column="robust_wsr",
        x_label="channel error variance",
        y_label="robust WSR (bit/s/Hz)",
        mode_filtered=True,
        log_y=False,
        aggregate_reps=False,
    ),
    "timing": KindSpec(
        x_column="size",
        y_column="seconds",
        x_label="antennas = users (L = K)",
        y_label="seconds per channel",
        mode_filtered=False,
        log_y=True,
        aggregate_reps=True,
    ),
}


@dataclass(frozen=True)
class PlotSpec:
    """One figure request: input CSV, kind, output path, styling."""

    input: str
    kind: str
    output: str
    title: str | None = None
    eval_mode: str = "shannon"
    dump_series: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotDataError(f"unknown figure kind {self.kind!r}")


def _read_rows(path, kind_spec):
    """Read the CSV and check that every required column is present."""
    required = ["solver", kind_spec.x_column, kind_spec.y_column]
    if kind_spec.mode_filtered:
        required.append("eval_mode")
    if kind_spec.aggregate_reps:
        required.append("rep")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise PlotDataError(f"{path}: missing column {column!r}")
        return list(reader)


def _to_float(row, column, path):
    try:
        return float(row[column])
    except ValueError:
        raise PlotDataError(
            f"{path}: non-numeric value {row[column]!r} in column {column!r}"
        ) from None


def build_series(spec):
    """Return the plotted series as [(solver, [(x, y), ...]), ...].

    Solvers keep their first-appearance order from the file; points are
    sorted by x.  For timing figures the y value at each (solver, size)
    is the mean over that point's repetitions.
    """
    kind_spec = KINDS[spec.kind]
    rows = _read_rows(spec.input, kind_spec)
    if kind_spec.mode_filtered:
        rows = [r for r in rows if r["eval_mode"] == spec.eval_mode]
        if not rows:
            raise PlotDataError(
                f"{spec.input}: no rows with eval_mode {spec.eval_mode!r}"
            )
    if not rows:
        raise PlotDataError(f"{spec.input}: no data rows")

    order = []
    points = {}
    for row in rows:
        solver = row["solver"]
        if solver not in points:
            order.append(solver)
            points[solver] = {}
        x = _to_float(row, kind_spec.x_column, spec.input)
        y = _to_float(row, kind_spec.y_column, spec.input)
        points[solver].setdefault(x, []).append(y)

    series = []
    for solver in order:
        pairs = []
        for x in sorted(points[solver]):
            ys = points[solver][x]
            if kind_spec.aggregate_reps:
                pairs.append((x, fmean(ys)))
            elif len(ys) > 1:
                raise PlotDataError(
                    f"{spec.input}: duplicate rows for solver {solver!r} at "
                    f"{kind_spec.x_column}={x:g}"
                )
            else:
                pairs.append((x, ys[0]))
        series.append((solver, pairs))
    return series


def dump_series(series, spec, path):
    """Write the plotted series to a CSV with one row per point."""
    kind_spec = KINDS[spec.kind]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["solver", kind_spec.x_column, kind_spec.y_column])
        for solver, pairs in series:
            for x, y in pairs:
                writer.writerow([solver, repr(x), repr(y)])


def render(spec):
    """Render the figure described by ``spec`` and return its series."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kind_spec = KINDS[spec.kind]
    series = build_series(spec)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for solver, pairs in series:
        xs = [x for x, _ in pairs]
        ys = [y for _, y in pairs]
        ax.plot(xs, ys, marker="o", label=solver)
    if kind_spec.log_y:
        ax.set_yscale("log")
    ax.set_xlabel(kind_spec.x_label)
    ax.set_ylabel(kind_spec.y_label)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)

    if spec.dump_series is not None:
        dump_series(series, spec, spec.dump_series)
    return series
