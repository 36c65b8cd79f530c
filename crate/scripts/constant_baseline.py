#!/usr/bin/env python3
"""RMSE and Score of a constant RUL predictor on a C-MAPSS test split.

Standalone reference for the value pinned in the acceptance suite. Reads only
the RUL file: the prediction ignores the sensor data, and the truth is the
listed RUL capped at the piecewise-linear ceiling.

    python3 scripts/constant_baseline.py data FD001 [--value 125] [--cap 125]
"""

import argparse
import math
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("data_dir", type=Path)
    ap.add_argument("dataset", default="FD001", nargs="?")
    ap.add_argument("--value", type=float, default=125.0)
    ap.add_argument("--cap", type=float, default=125.0)
    args = ap.parse_args()

    lines = (args.data_dir / f"RUL_{args.dataset}.txt").read_text().split()
    truth = [min(float(v), args.cap) for v in lines]
    errs = [args.value - t for t in truth]
    rmse = math.sqrt(sum(e * e for e in errs) / len(errs))
    score = sum(math.expm1(-e / 13.0) if e < 0 else math.expm1(e / 10.0) for e in errs)
    print(f"engines {len(errs)}")
    print(f"rmse  {rmse!r}")
    print(f"score {score!r}")


if __name__ == "__main__":
    main()
