"""Step-size, momentum and (I, b) laws.

Theoretical mode derives every constant from (sigma, L, b, K, I); practical
mode uses w_t = 1 and a user-set kappa and cbar.
"""

import sys

from stemfl import fedavg_tradeoff, stem_tradeoff, theoretical_schedule, practical_schedule
from stemfl.schedules import eta_of_t, momentum_of_t, w_of_t, write_schedule_csv

# sigma = L = b = K = I = 1 gives eta_1 = 1/16 exactly
s = theoretical_schedule(1.0, 1.0, 1, 1, 1, 100)
print("kappa_bar", s.kappa_bar, "c", s.c, "eta_1", eta_of_t(s, 1))
for t in (1, 10, 100):
    print(f"t={t:4d} w={w_of_t(s, t):10.2f} eta={eta_of_t(s, t):.5f} a={momentum_of_t(s, t):.5f}")

# the step never exceeds 1/(16 L I), whatever the constants
s = theoretical_schedule(3.0, 2.0, 4, 8, 5, 500)
print("max eta * 16 L I =", max(eta_of_t(s, t) for t in range(501)) * 16 * s.L * s.I)

# practical mode: decay once per epoch
s = practical_schedule(0.6, 3.6, 1.0, 10.0, 4, 4, 2, 40, epoch_len=10)
write_schedule_csv(s, sys.stdout, t_max=12)

# the trade-off dial: nu = 0 is large batches, nu = 1 many local steps
print("STEM  T=4096 K=4:", {nu: stem_tradeoff(nu, 4096, 4) for nu in (0, 0.25, 0.5, 0.75, 1)})
print("FedAvg T=6561 K=3:", {nu: fedavg_tradeoff(nu, 6561, 3) for nu in (0, 0.5, 1)})
