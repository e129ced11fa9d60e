"""
How close to the bound?
=======================

A short single-target Monte Carlo run at two SNRs. Each trial's squared
error is divided by the CRLB of its own scene before averaging, so scenes
with very different geometries are weighted fairly. A gap near 0 dB means
the estimator is efficient for that parameter.

Forty trials keep the run to about a minute; the acceptance suite uses 500.
"""
from tendae.harness import ExperimentConfig, run_sweep
from tendae.scenario import ScenarioConfig

exp = ExperimentConfig(scenario=ScenarioConfig(k=1), snr_grid_db=(10.0, 20.0, 30.0), trials=40,
                       estimators=("tendae_als",), crlb=True)
report = run_sweep(exp)

print(f"{'parameter':>12}" + "".join(f"{s:>10g} dB" for s in exp.snr_grid_db))
for p in report.parameters():
    gaps = [report.gap_db("tendae_als", s, p) for s in exp.snr_grid_db]
    print(f"{p:>12}" + "".join(f"{g:>+11.2f}  " for g in gaps))
print(f"failed trials: {sum(report.failures.values())}, wall clock {report.wall_clock_s:.0f} s")
