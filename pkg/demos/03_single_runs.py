"""One STEM run and one FedAvg run on the reference problem."""

import numpy as np

from stemfl import reference_configs, rounds_to_eps
from stemfl.experiment import execute, resolve

cfgs = reference_configs(seeds=(0,))
for name, cfg in cfgs.items():
    r = resolve(cfg, T=4096)
    rec = execute(cfg, r, seed=0, diagnostics=True)
    g = rec.column("grad_norm_sq")
    print(name, r.echo())
    for t in (1, 64, 512, 4096):
        row = rec.rows[t - 1]
        print(f"  t={t:5d} round={row['round']:5d} |grad|^2={row['grad_norm_sq']:.2e} "
              f"consensus={row['consensus_sq']:.1e} ifo={row['ifo_total']}")
    print("  rounds to 1e-2:", rounds_to_eps(rec, 1e-2), " min |grad|^2:", float(np.min(g)))
    print("  output iterate t =", rec.output_index + 1)
