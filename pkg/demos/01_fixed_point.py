#!/usr/bin/env python3
# A single equilibrium block, by hand.
#
# The state update is
#     s <- alpha * s + beta * W @ tanh(s) + b + x_proj
# and the block's output is the state it settles on. With alpha = beta = 0.5
# the map is a contraction whenever beta * ||W||_2 < 0.5, so the iteration
# converges from any start.

import numpy as np

from optideq.cells import CellSpec
from optideq.deq import DeqBlockParams, ModelConfig, deq_step, solve_fixed_point
from optideq.evalkit import OPTICAL_PASS_NS, latency_projection

rng = np.random.default_rng(0)
d, d_in = 16, 6
cfg = ModelConfig(d_in, d_hidden=d, n_blocks=1)

W = rng.standard_normal((d, d))
W *= 0.4 / (cfg.beta * np.linalg.norm(W, 2))        # beta * ||W||_2 = 0.4
block = DeqBlockParams(W_ip=rng.uniform(-0.4, 0.4, (d, d_in)), b_ip=np.zeros(d),
                       W=W, b=rng.normal(size=d) * 0.1)
x = rng.normal(size=d_in)
x_proj = block.project(x)

# %% iterate manually and watch the relative step shrink
s = block.b + x_proj
print("iter  relative step")
for t in range(1, 13):
    new = deq_step(s, block, x_proj, cfg.alpha, cfg.beta, CellSpec.simple())
    rel = np.linalg.norm(new - s) / max(np.linalg.norm(s), 1e-12)
    s = new
    print(f"{t:4d}  {rel:.3e}")

# %% the solver stops at the first step below tol = 1e-3
res = solve_fixed_point(block, x_proj, cfg)
print(f"\nsolver: converged={res.converged} after {res.iterations} iterations, residual {res.residual:.2e}")

# One more step from s* is a cheap certificate: it should barely move.
nxt = deq_step(res.s_star, block, x_proj, cfg.alpha, cfg.beta, CellSpec.simple())
print("certificate:", np.linalg.norm(nxt - res.s_star) / np.linalg.norm(res.s_star))

# %% what those iterations would cost on the optical core
# Four blocks share one core, so they run one after another; a pass takes 20 ns.
iters = res.iterations
print(f"\n4 blocks x {iters} iterations x {OPTICAL_PASS_NS:g} ns = {latency_projection(4, iters, OPTICAL_PASS_NS):g} ns")
print("reference figure, 9 iterations:", latency_projection(4, 9, OPTICAL_PASS_NS), "ns")
