"""Watching a phantom dissolve into noise.

With the default linear schedule (T=100, beta from 1e-4 to 0.02) the signal
coefficient sqrt(alpha_bar_t) only falls to about 0.60 by the last step, so
x_T still carries a visible trace of x_0. That matters for sampling: the
reverse chain starts from pure N(0, I) and has to make up the difference.

Run:  python3 demos/02_forward_process.py
"""

import numpy as np

from awdiff.diffusion import forward_marginal, linear_beta_schedule
from awdiff.image import make_rng
from awdiff.phantom import PhantomParams, generate_phantom

sched = linear_beta_schedule(100)
x0, _ = generate_phantom(PhantomParams(n_blines=3, seed=1))
eps = make_rng(0).standard_normal(x0.shape)

print(" t   alpha_bar  signal  noise   corr(x_t, x0)")
for t in (1, 10, 25, 50, 75, 100):
    ab = sched.alpha_bar(t)
    x_t = forward_marginal(x0, t, eps, sched)
    corr = np.corrcoef(x_t.ravel(), x0.ravel())[0, 1]
    print(f"{t:3d}   {ab:.5f}   {np.sqrt(ab):.3f}   {np.sqrt(1 - ab):.3f}   {corr:+.3f}")

longer = linear_beta_schedule(1000)
print(f"for comparison, T=1000 ends at alpha_bar {longer.alpha_bar(1000):.2e}")
