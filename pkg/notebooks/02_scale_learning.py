"""
Learning the quantizer scale
============================

The step size alpha is trained with a ternary gradient: three candidate
scales are scored by reconstruction error and alpha moves toward the winner.
Here we watch that rule on a Gaussian tensor and compare the scale it
settles on with a brute-force search over 1000 scales.
"""

# %%
import numpy as np

from lglsq.estimators import EstimatorConfig
from lglsq.quantizer import QuantizerState, dequantize, init_scale, quantize_codes
from lglsq.ssg import SsgState, candidate_errors, scale_step

rng = np.random.default_rng(0)
x = rng.normal(0, 1.0, 4096)


def mse(scale):
    return np.mean((x - np.clip(np.round(x / scale), -8, 7) * scale) ** 2)


# %%
# A signed 4-bit quantizer starts from the max-abs scale.
q = QuantizerState(4, True, estimator=EstimatorConfig(), ssg=SsgState())
q.set_alpha(init_scale(x, q))
print(f"initial alpha {q.alpha[0]:.4f}, mse {mse(q.alpha[0]):.5f}")
codes = quantize_codes(x, q)
print("codes used:", np.unique(codes))
print("max reconstruction error:", np.abs(dequantize(codes, q) - x).max())

# %%
# Candidate errors at alpha*(0.5+z), alpha, 2*alpha*(1-z) for z = 0.
print("candidate errors:", candidate_errors(x, q.alpha[0], 0.0, -8, 7))

# %%
# Run 500 steps and compare with the grid optimum.
a0 = float(q.alpha[0])
for step in range(500):
    scale_step(q, x, lr=0.01 / a0)
    if step in (0, 10, 100, 499):
        print(f"step {step:>3}: alpha {q.alpha[0]:.4f}, z {q.ssg.z[0]:.5f}, mse {mse(q.alpha[0]):.5f}")

grid = np.geomspace(1e-3, 10, 1000)
errs = [mse(s) for s in grid]
best = grid[int(np.argmin(errs))]
print(f"grid optimum alpha {best:.4f}, mse {min(errs):.5f}")
print(f"learned / optimal mse: {mse(q.alpha[0]) / min(errs):.3f}")

# %%
# The rule stops as soon as the middle candidate wins. Between roughly
# 0.2 and 0.5 standard deviations it always does, so where alpha ends up
# depends on where it started.
for a in (0.15, 0.25, 0.34, 0.45, 0.55):
    print(f"alpha {a:.2f}: winner = {['left', 'middle', 'right'][int(np.argmin(candidate_errors(x, a, 0.0, -8, 7)))]}")
