"""Regenerate the golden pilot values used by the tests.

Prints the long-run V1 estimate and the 1e5-iteration Robbins-Monro shift
for the European call with the Milstein scheme.
"""

from dataclasses import replace

from aisml2r.bench_cli import PRESETS, calibrate, pilot_theta
from aisml2r.calibration import estimate_V1
from aisml2r.streams import Streams

cfg = replace(PRESETS["european-milstein"], ks=(5,), estimators=("ml2r",))
model, payoff = cfg.model(), cfg.payoff_spec()

v1 = estimate_V1(model, payoff, "milstein", 1.0, 2_000_000, Streams(100).level(2))
print(f"V1 (2e6 pairs, seed 100): {v1:.4f}")

sp = calibrate(cfg).structural
print(f"pilot: V1={sp.V1:.4f} var={sp.var_Y0:.2f} lambda={sp.lam:.4f}")
print(f"theta oracle (1e5 iterations, seed 999): {pilot_theta(cfg, sp, n_iter=100_000, seed=999):.4f}")
for s in range(5):
    print(f"  seed {s}: theta_bar after {cfg.pilot_iter} iterations = {pilot_theta(cfg, sp, seed=s):.4f}")
