"""
Steering a flow away from an infeasible half-plane
==================================================

Train two small vector fields on the two-mode half-plane problem, one
without the logic penalty and one with it, then sample each with and
without the late-time gradient correction.
"""

import numpy as np

from constrained_flow import SampleConfig, TrainConfig, builtin_case_study, sample, train, violation_rate

cs = builtin_case_study(1)
print(cs.constraint)

###############################################################################
# Training. 2000 iterations keep this short; the studies use 8000.

fm, _ = train(TrainConfig(lambda_max=0.0, iterations=2000, seed=0), cs, cs.constraint)
lgvf, hist = train(TrainConfig(lambda_max=cs.lambda_max, iterations=2000, seed=0), cs, cs.constraint)
print(f"final losses: fm {hist.loss_fm[-1]:.3f}, logic {hist.loss_logic[-1]:.4f}")

###############################################################################
# Sampling. The correction only switches on after t0 = 0.3.

for name, p in (("fm", fm), ("lgvf", lgvf)):
    for eta in (0.0, cs.eta_max):
        x, _ = sample(p, cs.constraint, SampleConfig(eta_max=eta, n_samples=2000, seed=1))
        print(f"{name:5s} eta_max={eta:<4} violation {violation_rate(x, cs.constraint):.2f}%")

###############################################################################
# The violators hug the line x + y = 0 from the wrong side.

x, _ = sample(fm, cs.constraint, SampleConfig(eta_max=0.0, n_samples=2000, seed=1))
bad = x[cs.constraint.violation(x) > 0]
print("a few violators:", np.round(bad[:5], 3))
print("largest a @ x:", float((bad @ cs.constraint.a).max()))
