#!/usr/bin/env python3
"""Run the end-to-end experiment (synth -> train -> attack -> defend).

Equivalent to `chrono-shield sweep` but handy for editors and debuggers.
"""

import argparse
import logging

from chrono_shield.harness import emit_report, run_full_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/sweep")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-images", type=int, default=None)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    report = run_full_sweep(args.out, seed=args.seed, max_images=args.max_images)
    print(emit_report(report, "text-table").decode("utf-8"))


if __name__ == "__main__":
    main()
