"""Effect of length and voltage noise on the identified ranges.

Runs a small sweep (10 seeds per level) and prints median MAPE* with its
quartiles. Voltage noise of half a percent either empties the polytope or
inflates the best-fit residual far past the voltage drops it should
explain; both outcomes are flagged rather than reported as a range.

Set FEEDERID_WORKERS to use more than one process.
"""
import logging

from feederid.pipeline import RunConfig, run_noise_sweep

logging.basicConfig(level=logging.ERROR)

base = RunConfig(synth={"n_nodes": 30, "chains": [3, 2, 2], "p_max": 0.015}, m=5000)
grid = [{}, {"length_noise_sigma": 0.02}, {"length_noise_sigma": 0.05},
        {"voltage_noise_sigma": 0.005}]
table = run_noise_sweep(base, grid, seeds=range(10))

print(f"{'level':32s} ok/fail/derailed   MAPE* r median [p25, p75]")
for lv in table["levels"]:
    m = lv["mape_r"]
    stat = f"{m['median']:5.2f} [{m['p25']:.2f}, {m['p75']:.2f}]" if m else "  n/a"
    counts = f"{lv['n_ok']}/{lv['n_failed']}/{lv['n_derailed']}"
    print(f"{str(lv['level'] or 'noiseless'):32s} {counts:17s} {stat}")
