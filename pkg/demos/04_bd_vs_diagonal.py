"""
BD-RIS against a diagonal RIS
=============================

The same targets, pilots and noise draws, once with a fully connected RIS
and once with a diagonal one. The diagonal surface cannot tell its arrival
angle from its departure angles, so those rows are missing from its report.
"""
import numpy as np

from tendae.harness import ExperimentConfig, compare_architectures
from tendae.scenario import ScenarioConfig

exp = ExperimentConfig(scenario=ScenarioConfig(k=2), snr_grid_db=(10.0, 20.0), trials=20,
                       estimators=("tendae_als",), crlb=False)
bd, dg = compare_architectures(exp)

for snr in exp.snr_grid_db:
    print(f"SNR {snr:g} dB")
    for p in bd.parameters():
        b = bd.rmse("tendae_als", snr, p)
        if p in dg.parameters():
            d = dg.rmse("tendae_als", snr, p)
            print(f"  {p:>12}  BD {b:.3e}  diagonal {d:.3e}  ({20 * np.log10(d / b):+.1f} dB)")
        else:
            print(f"  {p:>12}  BD {b:.3e}  diagonal    n/a")
print("notes:", *dg.notes)
