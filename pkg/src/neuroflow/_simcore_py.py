"""Numpy fallback for the compiled diffusion recursion kernel.

Matches `_simcore.simulate_steps` step for step; summation order inside a
step differs, so results agree with the compiled kernel only to rounding.
"""

from __future__ import annotations

import numpy as np


def simulate_steps(memory, conductivity, tails, heads, history, drive, out):
    n_lags, n_nodes = memory.shape
    n_steps = out.shape[0]
    for t in range(n_steps):
        acc = drive[t].copy()
        for k in range(n_lags):
            prev = out[t - k - 1] if t - k - 1 >= 0 else history[k - t]
            acc += memory[k] * prev
            phi = conductivity[k] * (prev[heads] - prev[tails])
            acc += np.bincount(tails, weights=phi, minlength=n_nodes)
            acc -= np.bincount(heads, weights=phi, minlength=n_nodes)
        out[t] = acc
    return out
