"""Sweeping nu along STEM's (I, b) trade-off curve at a fixed horizon.

Cells on the curve need roughly the same number of rounds; dropping both
the batch and the local steps to one costs many more.
"""

from stemfl.experiment import OFF_CURVE_CELL, reference_sweep_config, sweep_tradeoff

cfg = reference_sweep_config(seeds=(0, 1, 2, 3, 4))
result = sweep_tradeoff(cfg, (0.0, 0.25, 0.5, 0.75, 1.0), extra_cells=OFF_CURVE_CELL)
print(result.to_csv())

means = {label: result.cell(label).stats(1e-2)["mean_rounds"]
         for label in ["nu=0.0", "nu=0.25", "nu=0.5", "nu=0.75", "nu=1.0", "b1_I1"]}
on_curve = [v for k, v in means.items() if k.startswith("nu")]
print("spread along the curve: %.2fx" % (max(on_curve) / min(on_curve)))
print("off-curve cell vs best: %.1fx" % (means["b1_I1"] / min(on_curve)))
