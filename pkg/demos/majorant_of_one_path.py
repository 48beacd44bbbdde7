"""
Facets and roughness of one conditioned path
============================================

Draw a path at N=128, then look at its concave majorant: the facet crossed
by the diagonal, the longest facet, and the vertex furthest below the hull.
"""

import numpy as np

from facetlab.chain import init_chain, run
from facetlab.majorant import facet_statistics, least_concave_majorant, mean_facet, roughness_profile
from facetlab.path_core import ModelParams
from facetlab.rng import RngStream

n = 128
state = init_chain(ModelParams(0.3, n), RngStream(3))
run(state, 3000, window_fraction=0.1, observer=None)
path = state.path
print(f"length {path.length}, area {path.area} (threshold {n * n}), start height {path.start_height}")

maj = least_concave_majorant(path)
print(len(maj.points()), "extreme points; first few:", maj.points()[:5])

f = mean_facet(path, 1.0)
print("facet on the diagonal:", f.a, "->", f.b, f"length {f.length:.2f}")

d, _ = roughness_profile(path)
i = int(np.argmax(d))
print("roughest vertex", path.vertex(i), f"at distance {d[i]:.2f}")

# the same numbers, rescaled by the predicted powers of N
s = facet_statistics(path)
print({k: round(v, 3) for k, v in s.items()})
print("MeanFL / N^(2/3) =", round(s["mean_fl"] / n ** (2 / 3), 3), " MeanLR / N^(1/3) =", round(s["mean_lr"] / n ** (1 / 3), 3))
