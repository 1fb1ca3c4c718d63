#!/usr/bin/env python3
"""Reproduce the headline benchmark grid: every scenario, five seeds,
all five methods, mock provider.  Writes metrics.csv plus per-run
reports under the output directory (default: results/).  Takes roughly
twenty minutes with two workers; the 13-variable cells dominate.

Usage: python3 scripts/run_all_scenarios.py [out_dir] [--quick]
  --quick   trims to 2 seeds and skips largesim (smoke use)
"""

import sys

from buildcause.cli import main


def run(out_dir: str = "results", quick: bool = False) -> int:
    scenarios = "base,noisy,hidden" if quick else "base,noisy,hidden,largesim"
    seeds = "1..2" if quick else "1..5"
    return main(
        [
            "benchmark",
            "--scenarios", scenarios,
            "--seeds", seeds,
            "--out-dir", out_dir,
            "--workers", "2",
        ]
    )


if __name__ == "__main__":
    argv = [a for a in sys.argv[1:] if a != "--quick"]
    sys.exit(run(argv[0] if argv else "results", quick="--quick" in sys.argv))
