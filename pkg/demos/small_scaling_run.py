"""
A small scaling experiment
==========================

A scaled-down version of the exponent fit: a few chains per N, short runs.
The full settings live in tests/test_acceptance.py and take a few minutes.
"""

import tempfile

from facetlab.harness import ExperimentConfig, estimate, tail_curve, load_records

out = tempfile.mkdtemp(prefix="facetlab-demo-")
config = ExperimentConfig(lam=0.3, n_grid=[16, 32, 64, 128], chains=4, sweeps=1500, burn_in=500, thin=10,
                          out_dir=out)
result = estimate(config)

print("N     E[MeanFL]   se      E[MeanLR]   E[length]/N")
for n in sorted(result.per_n):
    row = result.per_n[n]
    print(f"{n:<5d} {row['mean_fl']['mean']:8.3f} {row['mean_fl']['se']:7.3f} {row['mean_lr']['mean']:10.3f}"
          f" {row['length']['mean'] / n:12.3f}")

for stat in ("mean_fl", "mean_lr", "max_fl", "max_lr"):
    fit = result.fit(stat)
    print(f"{stat:8s} slope {fit.slope:.3f}  95% CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")

# excess-area survival at the largest N, in units of N
records = [r for chain in load_records(out)[128] for r in chain]
for row in tail_curve(records, "excess_area", [1, 2, 4], scale=128):
    print(f"P[excess >= {row['t']:.0f} N] = {row['survival']:.3f}  [{row['low']:.3f}, {row['high']:.3f}]")
print("raw records and summary.json in", out)
