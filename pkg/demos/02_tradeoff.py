"""
Rate/power tradeoff frontier.

Instead of maximizing the ratio, the optimizer maximizes w1 * rate - w2 * power
for a range of weight ratios. Larger w2 trades spectral efficiency for lower
consumption and fewer active chains; the EE-optimal point sits on this curve.

Run: python3 demos/02_tradeoff.py
"""

from eeisac import harness
from eeisac.config import load_config
from eeisac.fd_optimizer import OptimizerOptions

scn = load_config("setup1", "fd")
rows = harness.tradeoff(scn, [0.0, 0.5, 1.0, 2.0, 4.0], trials=2, seed=3,
                        options=OptimizerOptions(r_inner=10, r_outer=4))

print(f"{'w2/w1':>6}{'SE':>8}{'power W':>10}{'EE':>8}{'chains':>8}")
for r in rows:
    print(f"{r['omega_ratio']:6g}{r['mean_se']:8.3f}{r['mean_power']:10.3f}"
          f"{r['mean_ee']:8.4f}{r['mean_n_active']:8.2f}")
