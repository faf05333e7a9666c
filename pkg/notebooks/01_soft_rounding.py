"""
Soft rounding and its gradient
==============================

Hard rounding has zero gradient almost everywhere. The arctangent soft
round replaces it during training with a smooth staircase whose steepness
is set by lambda. This script prints how the surrogate and its derivative
behave as lambda grows, and what the error correction does to the
gradient.
"""

# %%
import numpy as np

from lglsq.estimators import asr_backward, asr_forward, lambda_at, mde_adjust, LambdaSchedule

np.set_printoptions(precision=4, suppress=True)

# %%
# A few points inside one unit cell. Half-integers stay put for every lambda.
x = np.array([0.05, 0.25, 0.45, 0.5, 0.55, 0.75, 0.95])
for lam in (1, 5, 20, 1e4):
    print(f"lambda={lam:>7}: asr={asr_forward(x, lam)}")
print("round          :", np.round(x + 1e-12))

# %%
# The derivative peaks at the half-integer (lambda / pi) and is small near
# integers, which is the opposite of what a straight-through estimator does.
for lam in (1, 5, 20):
    print(f"lambda={lam:>3}: d asr/dx = {asr_backward(x, lam)}")

# %%
# Training grows lambda linearly per epoch and caps it.
sched = LambdaSchedule(5, 1, 50)
print("lambda by epoch:", [lambda_at(e, sched) for e in (0, 1, 5, 20, 45, 60)])

# %%
# The correction multiplies the gradient by 1 + tanh(g) * (x - asr(x)).
# Where soft rounding undershoots (x above the surrogate) the gradient grows;
# where it overshoots the gradient shrinks. It never flips sign while the
# residual stays inside (-1, 1).
lam = 5.0
g = asr_backward(x, lam)
print("residual x - asr(x):", x - asr_forward(x, lam))
print("gradient before    :", g)
print("gradient after     :", mde_adjust(g, x, asr_forward(x, lam)))
