"""Regenerate the curve data for figures 3, 4 and 5 into results/.

Full budgets take a while (fig. 4/5 include the N=16 block bound at nine
harvest probabilities); pass --quick for a coarse pass.
"""
import argparse
import sys

from ehcap.cli import run

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
ap.add_argument("--threads", default="1")
ap.add_argument("--out-dir", default="results")
ap.add_argument("--seed", default="0")
a = ap.parse_args()

extra = (["--length", "100000", "--iters", "10", "--budget-n", "8", "--dp-n", "1000",
          "--lb-n", "3"] if a.quick else [])
code = 0
for which in ("3", "4", "5"):
    code = max(code, run(["reproduce-fig", which, "--threads", a.threads,
                          "--out-dir", a.out_dir, "--seed", a.seed] + extra))
sys.exit(code)
