"""The stability threshold at average sensitivity 1.

Below it the scheme converges to the stable point; above it no stable point
exists and the risk grows without bound. A shortened horizon with a
constant step makes the contrast visible quickly.
"""

from perfnet import preset, run_single

for eps in (0.9, 1.05, 1.2):
    cfg = preset("gaussian_mean").replace(**{
        "environment.eps_avg": eps,
        "environment.eps_grid": {"spread": 0.0},
        "step.kind": "constant", "step.gamma": 0.02,
        "step.a0": None, "step.a1": None,
        "run.T": 15_000, "run.record_every": 5_000,
        "experiment.seeds": [0], "run.seed": 0,
    })
    traj, records = run_single(cfg)
    risks = [f"{r.risk:.3g}" for r in records]
    tag = "diverged" if traj.diverged else (
        "risk exploding" if records[-1].risk > 10 * records[0].risk else "converging")
    print(f"eps_avg = {eps}: risk series {risks} -> {tag}")
