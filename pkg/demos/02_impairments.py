#!/usr/bin/env python3
# How far does each hardware impairment move the cell output?
#
# The AOC cell computes W @ tanh(s) through a chain of imperfect stages.
# Switching them on one at a time shows which ones matter for a given
# operating point. With every magnitude at zero and quantisation off the
# AOC cell is the ideal cell, exactly.

import numpy as np

from optideq.cells import STAGE_NAMES, CellSpec, cell_apply, quantize_weights

rng = np.random.default_rng(1)
d = 16
W = rng.standard_normal((d, d)) * 0.3
s = rng.normal(size=d)
ideal = cell_apply(W, s, CellSpec.simple())

off = {name: 0.0 for name in STAGE_NAMES[:6]}
zero = CellSpec.aoc(off, quant_bits=None)
print("all stages off, no quantisation: max deviation",
      np.max(np.abs(cell_apply(W, s, zero) - ideal)))

# %% one stage at a time, magnitude 0.02 (the default)
print("\nstage              rel. deviation")
for name in STAGE_NAMES[:6]:
    spec = CellSpec.aoc({**off, name: 0.02}, quant_bits=None)
    dev = np.linalg.norm(cell_apply(W, s, spec) - ideal) / np.linalg.norm(ideal)
    print(f"{name:<18} {dev:.2e}")

# %% weight quantisation alone, at several bit depths
print("\nbits  max |W - Q(W)|   rel. output deviation")
for bits in (4, 6, 9, 12):
    Q = quantize_weights(W, bits)
    spec = CellSpec.aoc(off, quant_bits=bits)
    dev = np.linalg.norm(cell_apply(W, s, spec) - ideal) / np.linalg.norm(ideal)
    print(f"{bits:4d}  {np.max(np.abs(W - Q)):.2e}        {dev:.2e}")

# %% the full default cell: all six stages at 0.02 plus 9-bit weights
full = CellSpec.aoc()
dev = np.linalg.norm(cell_apply(W, s, full) - ideal) / np.linalg.norm(ideal)
print(f"\ndefault AOC cell: rel. deviation {dev:.2e}")

# The TIA gains and crosstalk mixing are frozen per device (drawn once from
# the cell seed), so a different seed is a different physical unit.
other = CellSpec.aoc(rng_seed=7)
print("same W, other device: rel. difference",
      np.linalg.norm(cell_apply(W, s, other) - cell_apply(W, s, full)) / np.linalg.norm(ideal))
