#!/usr/bin/env python3
"""Convert a sociopatterns-style contact list to the events CSV format.

The published high-school contact files are whitespace- or tab-separated
rows `t i j [Ci Cj]` (20-second resolution, no header). This writes the
`source,dest,timestamp` CSV the pipeline consumes. No downloading here:
fetch the file yourself (see README) and point this script at it.
"""

import argparse
import csv
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("raw", type=Path, help="downloaded contact list (t i j ...)")
    ap.add_argument("--out", type=Path, default=Path("data/highschool.csv"))
    args = ap.parse_args()

    rows = []
    with open(args.raw, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.replace(",", " ").split()
            if len(parts) < 3:
                continue
            t, i, j = parts[0], parts[1], parts[2]
            rows.append((i, j, float(t)))
    if not rows:
        raise SystemExit(f"no contact rows found in {args.raw}")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "dest", "timestamp"])
        for i, j, t in rows:
            writer.writerow([i, j, repr(t)])
    nodes = {r[0] for r in rows} | {r[1] for r in rows}
    print(f"wrote {args.out}: {len(rows)} contacts, {len(nodes)} nodes")


if __name__ == "__main__":
    main()
