"""Empirical strong-rate slopes of the coupled payoff differences (GBM call)."""

import numpy as np

from aisml2r.calibration import strong_rate_slope
from aisml2r.path_kernel import gbm
from aisml2r.payoffs import PayoffSpec
from aisml2r.streams import Streams

model = gbm(100.0, 0.06, 0.4, 1.0)
payoff = PayoffSpec.european_call(80.0, 0.06, 1.0)

for scheme in ("milstein", "euler"):
    for levels in (range(2, 7), range(4, 10)):
        slope, h, m2 = strong_rate_slope(model, payoff, scheme, levels, 2, 1.0, 100_000, Streams(60))
        print(f"{scheme:8s} h in [{h[-1]:.2e}, {h[0]:.2e}]  slope {slope:.3f}")
        print("         log2 E[dP^2]:", np.round(np.log2(m2), 2))
