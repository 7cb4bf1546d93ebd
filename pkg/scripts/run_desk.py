#!/usr/bin/env python3
"""Run the desk-scale pipeline: calibrate, train all methods on all seeds,
UE-count sweep, robustness grid, smoothness ablation and report.

Usage: python3 scripts/run_desk.py [--out results/desk] [--jobs N]

Finished training runs in the output directory are reused, so an interrupted
run resumes where it stopped.
"""

import argparse
import logging

from ranlb.config import desk_preset
from ranlb.experiments import run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=desk_preset().out)
    ap.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run_pipeline(desk_preset(), args.out, args.jobs)


if __name__ == "__main__":
    main()
