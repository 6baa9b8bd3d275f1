"""Command line front end: render a panel from summary CSVs.

    fclub-plot --summary results/summary.csv --panel regret --out regret.png

Repeat --summary to overlay several runs on one time panel or to form
the x axis of the sweep panel.  Exit codes: 0 on success, 2 for bad
inputs (missing or malformed summaries, unknown panel), 1 otherwise.
"""

import argparse
import sys
from pathlib import Path

from .figures import PANELS, FigureSpec, SummaryError, render


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fclub-plot",
        description="Render comparison panels from simulator summary CSVs.",
    )
    parser.add_argument("--summary", action="append", required=True,
                        metavar="CSV",
                        help="summary.csv written by the simulator (repeatable)")
    parser.add_argument("--panel", choices=PANELS, default="regret",
                        help="which panel to draw (default: regret)")
    parser.add_argument("--out", required=True, metavar="IMG",
                        help="output image path; format follows the suffix")
    parser.add_argument("--title", default="", help="optional panel title")
    args = parser.parse_args(argv)

    try:
        spec = FigureSpec(summaries=tuple(args.summary), panel=args.panel,
                          out=Path(args.out), title=args.title)
        out = render(spec)
    except SummaryError as err:
        print(f"plot error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # pragma: no cover - defensive
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
