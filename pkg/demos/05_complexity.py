"""
Operation counts
================

Dominant costs of each estimator from the closed-form expressions, for a
growing number of targets. The LS baseline does not depend on K; the
two-stage estimator grows with it but stays far cheaper.
"""
from dataclasses import replace

from tendae.harness import complexity_estimate
from tendae.scenario import ScenarioConfig

base = ScenarioConfig()
names = ("ls", "ksa", "tendae_als", "tendae_hosvd")
print(f"{'K':>3}" + "".join(f"{n:>15}" for n in names))
for k in range(1, 7):
    cfg = replace(base, k=k)
    print(f"{k:>3}" + "".join(f"{complexity_estimate(cfg, n)['total']:>15.3e}" for n in names))
