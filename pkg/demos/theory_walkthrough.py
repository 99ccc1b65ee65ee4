"""
Numerical checks of the descent guarantees
==========================================

Runs the checks used by ``constrained-flow theory`` one at a time on a
briefly trained ring model, printing what each one measures.
"""

from constrained_flow import TrainConfig, builtin_case_study, train
from constrained_flow.report import gronwall_check, lemma_check, mmd_probe, monotone_check, one_step_check

cs = builtin_case_study(2)
p, _ = train(TrainConfig(lambda_max=cs.lambda_max, iterations=1500, seed=0), cs, cs.constraint)
eta, t0 = cs.eta_max, 0.3

###############################################################################
# The violation-rate identity holds up to an O(1/K) residual, so doubling K
# should roughly halve it.

r = lemma_check(p, cs, eta, t0, seed=0)
print("residuals by K:", r["max_residual"], "ratios:", r["ratios"])

###############################################################################
# With eta raised to the sufficient threshold plus a margin, violation never
# rises along a trajectory, except on steps that cross a hinge boundary.

r = monotone_check(p, cs, eta, t0, seed=0)
print(f"monotone: {r['passed']}, steps {r['steps_checked']}, kink steps skipped {r['kink_steps_skipped']}")

r = one_step_check(p, cs, eta, t0, seed=0, n_probe=2000)
print(f"one-step bound: {r['passed']}, min slack {r['min_slack']:.2e}")

###############################################################################
# Deviation between adjusted and plain trajectories stays under the
# Gronwall envelope built from estimated constants.

r = gronwall_check(p, cs, eta, t0, seed=0, n_trials=10)
print(f"gronwall: {r['trials_passed']}/{r['n_trials']}, worst ratio {r['worst_deviation_to_envelope']:.3f}")

###############################################################################
# MMD notices support mismatch: moving a quarter of clean samples into the
# forbidden region raises it.

r = mmd_probe(cs, seed=0, n=500, n_seeds=3)
print(f"mmd clean {r['clean_mmd_mean']:.4f} vs contaminated {r['contaminated_mmd_mean']:.4f}")
