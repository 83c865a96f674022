"""Batch figure generation: `plotkit spec.json [spec2.json ...]`.

Each spec file holds either one figure object or a list of them."""
from __future__ import annotations

import argparse
import json
import sys

from plotkit.figures import FigureSpec, PlotError, plot


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="plotkit", description="Render benchmark CSVs into figures.")
    ap.add_argument("specs", nargs="+", help="figure-spec JSON files")
    args = ap.parse_args(argv)
    try:
        for path in args.specs:
            with open(path) as fh:
                data = json.load(fh)
            for entry in data if isinstance(data, list) else [data]:
                for written in plot(FigureSpec.from_json(entry)):
                    print(written)
    except (PlotError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
