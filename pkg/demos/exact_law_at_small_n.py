"""
Chain against the exact law at N=1
==================================

At N=1 the conditioned measure can be written down by enumeration, so the
chain's (length, area) histogram can be compared with it directly.
"""

import numpy as np

from facetlab.chain import init_chain
from facetlab.oracle import exact_length_area_law
from facetlab.path_core import ModelParams
from facetlab.rng import RngStream

params = ModelParams(0.3, 1)
law = exact_length_area_law(params)
print("truncation length", law.max_length, "neglected mass <=", f"{law.neglected_mass_bound:.1e}")

# record the state after every proposal
state = init_chain(params, RngStream(0))
state.advance(50_000, 0.1, 0.4, 200)
hist = np.zeros(law.table.shape, dtype=np.int64)
state.advance(2_000_000, 0.1, 0.4, 200, hist=hist)
emp = hist / hist.sum()

print("\nlength  area  exact     chain")
for (n, a), p in sorted(law.as_dict(cutoff=0.01).items()):
    print(f"{n:6d} {a:5d}  {p:.4f}    {emp[n, a]:.4f}")

print("\ntotal variation", round(0.5 * np.abs(emp - law.table).sum(), 4))
print("acceptance rates", {k: round(v, 3) for k, v in state.acceptance_rates().items()})
