#!/usr/bin/env python3
# Why centre one-hot inputs on {-1, +1}?
#
# A sparse {0, 1} one-hot row has a single 1 per categorical group, so the
# input projection W_ip @ x sums only a handful of weights. The hidden units
# start near zero, where tanh is almost linear, and a model that begins
# linear tends to stay close to the logistic baseline for a long time.
#
# Centring maps 0 -> -1. Every column now contributes, the projection has
# far more spread, and it carries a row-independent offset -W_ip @ 1 that
# pushes units off tanh's centre, where the curvature lives. Nothing is
# trained here; the script measures the equilibrium states of a fresh
# ensemble under both encodings.

import numpy as np

from optideq.deq import ModelConfig, forward_batch, init_ensemble
from optideq.encoding import encode_rows, fit_encoder
from optideq.synth import SyntheticSpec, generate, synth_schema

cols = generate(SyntheticSpec(4_000, 3, "sparse-onehot", 0.02))
schema = synth_schema("sparse-onehot")

print("encoding   zeros  proj. std  |state| mean  curvature share")
for ising in (False, True):
    X = encode_rows(fit_encoder(cols, schema, "raw-ising", ising=ising), cols)
    model = init_ensemble(ModelConfig(X.shape[1]), seed=0)
    proj = np.concatenate([blk.project(X) for blk in model.blocks], axis=1)
    states = np.concatenate(forward_batch(model, X).states, axis=1)
    # share of tanh's second-order term in its value: |tanh(s) - s| / |tanh(s)|
    t = np.tanh(states)
    curv = np.mean(np.abs(t - states)) / np.mean(np.abs(t))
    name = "{-1,+1}" if ising else "{0,1}"
    print(f"{name:<9} {np.mean(X == 0):6.2f}  {proj.std():9.3f}  "
          f"{np.abs(states).mean():12.3f}  {curv:15.3f}")

# The offset that centring adds is the same for every row:
#     W_ip @ (2x - 1) = 2 W_ip @ x - W_ip @ 1
blk = init_ensemble(ModelConfig(X.shape[1]), seed=0).blocks[0]
print("\nspread of the constant offset -W_ip @ 1 across units:",
      round(float(np.std(blk.W_ip.sum(axis=1))), 3))
