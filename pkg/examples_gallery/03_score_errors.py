# What an imperfect score does to the output. A tangential perturbation
# changes the score by exactly delta in norm; we watch TV grow with it.
# The perturbed runs track a full Jacobian per point, so this takes a couple
# of minutes.

from probflow.harness import (ExperimentConfig, PerturbationGrid, SamplerSpec, ScheduleSpec,
                              TargetSpec, TvSpec, run_sweep)

config = ExperimentConfig(
    target=TargetSpec(family="low_rank_gaussian", d=32, k=(2,)),
    schedule=ScheduleSpec(T=(400,)),
    sampler=SamplerSpec(n=2000),
    perturbation=PerturbationGrid(kind=("none", "tangential", "constant_bias"),
                                  delta=(0.01, 0.03, 0.1)),
    tv=TvSpec(n=2000, eps_n=32),
)

### Sweep

report = run_sweep(config)
print(f"{'kind':14s} {'delta':>6s} {'eps_score':>10s} {'eps_jacobi':>10s} {'tv':>8s}")
for r in report.ok_rows():
    print(f"{r['kind']:14s} {float(r['delta']):6.2f} {float(r['eps_score']):10.4f} "
          f"{float(r['eps_jacobi']):10.3f} {float(r['tv']):8.4f}")

# The tangential field moves the score by delta orthogonally to it, so its
# eps_score is exactly delta. A constant shift also picks up the inner
# product with the score, which is large at small t: its eps_score is about
# 80 delta. It leaves the Jacobian alone, though, and the TV values of the two
# kinds track each other closely.
