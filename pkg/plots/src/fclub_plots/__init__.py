"""Comparison figures for bandit simulation summaries.

Reads the summary.csv files written by the fclub simulator and renders
regret, communication, or parameter-sweep panels with mean +/- one
standard deviation bands.  The only coupling to the simulator is the CSV
column contract.
"""

from .figures import (
    PANELS,
    SUMMARY_HEADER,
    FigureSpec,
    SummaryError,
    draw,
    load_summary,
    prepare_series,
    render,
)

__version__ = "0.1.0"

__all__ = [
    "PANELS",
    "SUMMARY_HEADER",
    "FigureSpec",
    "SummaryError",
    "draw",
    "load_summary",
    "prepare_series",
    "render",
]
