"""Empirical complexity exponents for STEM and FedAvg.

For each target eps, the horizon grows geometrically until a run reaches
eps; the cost is read at the first round that does. The slope of
log(cost) against log(1/eps) estimates the exponent. This takes a few
minutes on one core.
"""

import time

from stemfl import complexity_curve, reference_configs

start = time.perf_counter()
for name, cfg in reference_configs().items():
    curve = complexity_curve(cfg)
    print(name)
    rounds, ifo = curve.mean_cost("rounds"), curve.mean_cost("ifo")
    for e in curve.eps:
        print(f"  eps={e:.0e} mean rounds={rounds[e]:9.1f} mean IFO={ifo[e]:11.1f}")
    for kind in ("rounds", "ifo"):
        slope, r2 = curve.fit(kind)
        print(f"  {kind} exponent {slope:.2f} (r2 {r2:.3f})")
print("%.0f s" % (time.perf_counter() - start))
