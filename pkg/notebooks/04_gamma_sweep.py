"""
Blending the two groups' updates
================================

With fusion weight gamma each group applies (1 - gamma) of its own average
plus gamma of the other group's.  gamma = 0 is plain per-group training.
The sweep is written as a CSV for inspection; nothing is asserted.

    python notebooks/04_gamma_sweep.py [rounds] [out.csv]
"""

import csv
import sys

from ppoa.config import config_from_dict
from ppoa.federation import run_federation

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 30
out = sys.argv[2] if len(sys.argv) > 2 else "gamma_sweep.csv"

rows = []
for gamma in [0.0, 0.1, 0.2, 0.3, 0.4]:
    cfg = config_from_dict({"mode": "ppoa", "rounds": rounds, "eval_every": rounds, "gamma": gamma,
                            "scheme": {"p": 1, "q": 2},
                            "dataset": {"format": "ml-100k", "path": "data/ml-100k"}})
    _, summary = run_federation(cfg)
    fin = summary["final"]
    rows.append([gamma, fin["group0_ndcg"], fin["group1_ndcg"], fin["overall_ndcg"], fin["gap_ndcg"]])
    print("gamma %.1f  ndcg g0 %.4f  g1 %.4f  overall %.4f  gap %.4f" % tuple(rows[-1]))

with open(out, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["gamma", "group0_ndcg", "group1_ndcg", "overall_ndcg", "gap_ndcg"])
    w.writerows([[f"{x:.6g}" for x in r] for r in rows])
print("wrote", out)
