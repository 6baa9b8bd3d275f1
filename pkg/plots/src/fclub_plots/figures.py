"""Load simulator summary CSVs and draw comparison panels.

The simulator writes one summary.csv per experiment with per-round means
and population standard deviations across seeds.  This module turns one
or more of those files into matplotlib panels: cumulative regret vs
round, communication cost vs round, or a final-round sweep across
several summaries.  Bands are always mean +/- one standard deviation.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Column contract of the simulator's summary.csv.  Re-declared here on
# purpose: the plotting package reads files, not the simulator package.
SUMMARY_HEADER = [
    "policy", "t", "regret_mean", "regret_std", "comm_mean", "comm_std",
    "ms_per_round",
]

PANELS = ("regret", "communication", "sweep")

_PANEL_COLUMNS = {
    "regret": ("regret_mean", "regret_std"),
    "communication": ("comm_mean", "comm_std"),
    "sweep": ("regret_mean", "regret_std"),
}

_PANEL_LABELS = {
    "regret": ("round", "cumulative regret"),
    "communication": ("round", "communication cost"),
    "sweep": ("summary", "final cumulative regret"),
}


class SummaryError(ValueError):
    """A summary CSV is missing, garbled, or from a different producer."""


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    t: int
    regret_mean: float
    regret_std: float
    comm_mean: float
    comm_std: float


def load_summary(path):
    """Parse one summary.csv into SummaryRow records.

    Raises SummaryError with a file:line location for anything that does
    not match the simulator's column contract.
    """
    path = Path(path)
    if not path.is_file():
        raise SummaryError(f"{path}: no such summary file")
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SUMMARY_HEADER:
            raise SummaryError(
                f"{path}:1: header {header!r} does not match the simulator "
                f"summary contract {SUMMARY_HEADER!r}"
            )
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append(SummaryRow(
                    policy=rec[0],
                    t=int(rec[1]),
                    regret_mean=float(rec[2]),
                    regret_std=float(rec[3]),
                    comm_mean=float(rec[4]),
                    comm_std=float(rec[5]),
                ))
            except (IndexError, ValueError) as err:
                raise SummaryError(f"{path}:{lineno}: bad summary row: {err}") from err
    if not rows:
        raise SummaryError(f"{path}:2: summary has no data rows")
    return rows


@dataclass
class FigureSpec:
    """What to draw: which summaries, which panel, where to write it."""

    summaries: tuple
    panel: str = "regret"
    out: Path = Path("figure.png")
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""

    def __post_init__(self):
        if self.panel not in PANELS:
            raise SummaryError(
                f"unknown panel {self.panel!r}; expected one of {PANELS}")
        self.summaries = tuple(Path(p) for p in self.summaries)
        if not self.summaries:
            raise SummaryError("at least one summary file is required")
        self.out = Path(self.out)


def _policies(rows):
    # first-appearance order, matching the simulator's write order
    seen = []
    for row in rows:
        if row.policy not in seen:
            seen.append(row.policy)
    return seen


def prepare_series(spec):
    """Plot-ready curves for a spec: {label: (x, mean, std)} arrays.

    Pure in the file contents, so identical inputs give identical series.
    Time panels yield one curve per policy (prefixed with the file stem
    when several summaries are overlaid); the sweep panel collapses each
    summary to its final round and puts the summaries on the x axis.
    """
    tables = [(path, load_summary(path)) for path in spec.summaries]
    mean_key, std_key = _PANEL_COLUMNS[spec.panel]

    if spec.panel == "sweep":
        series = {}
        for policy in _policies([r for _, rows in tables for r in rows]):
            xs, means, stds = [], [], []
            for idx, (_, rows) in enumerate(tables):
                finals = [r for r in rows if r.policy == policy]
                if not finals:
                    continue
                last = max(finals, key=lambda r: r.t)
                xs.append(idx)
                means.append(getattr(last, mean_key))
                stds.append(getattr(last, std_key))
            series[policy] = (np.array(xs, dtype=float),
                              np.array(means), np.array(stds))
        return series

    series = {}
    for path, rows in tables:
        prefix = f"{path.stem}:" if len(tables) > 1 else ""
        for policy in _policies(rows):
            curve = sorted((r for r in rows if r.policy == policy),
                           key=lambda r: r.t)
            x = np.array([r.t for r in curve], dtype=float)
            mean = np.array([getattr(r, mean_key) for r in curve])
            std = np.array([getattr(r, std_key) for r in curve])
            series[prefix + policy] = (x, mean, std)
    return series


def draw(spec):
    """Build the matplotlib figure for a spec without writing it."""
    import matplotlib.pyplot as plt

    series = prepare_series(spec)
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    for label, (x, mean, std) in series.items():
        (line,) = ax.plot(x, mean, linewidth=1.4, label=label)
        ax.fill_between(x, mean - std, mean + std,
                        color=line.get_color(), alpha=0.2, linewidth=0)
    if spec.panel == "sweep":
        ax.set_xticks(np.arange(len(spec.summaries)),
                      [p.stem for p in spec.summaries])
    xdef, ydef = _PANEL_LABELS[spec.panel]
    ax.set_xlabel(spec.xlabel or xdef)
    ax.set_ylabel(spec.ylabel or ydef)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return fig


def render(spec):
    """Draw the panel and write it to spec.out; returns the output path."""
    import matplotlib.pyplot as plt

    fig = draw(spec)
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out, dpi=150)
    plt.close(fig)
    return spec.out
