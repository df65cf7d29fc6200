"""Pure NumPy kernel for the independence-model EM step.

Mirrors _kernels_cy; _backend picks whichever is available.  The step is
fused (conditional log likelihood, posterior expectation with the imputed
all-zero cell, and the closed-form update) because it dominates fit time.
"""

from __future__ import annotations

import numpy as np


def em_step_indep(bits, counts, weights, probs, eps):
    """One EM update for a model with no dependence blocks.

    bits : (P, K) uint8, row p holds the bits of profile p, row 0 all zero
    counts : (P,) float64 observed counts, counts[0] == 0
    weights : (L,) float64 current class weights
    probs : (L, K) float64 current inclusion probabilities

    Returns (loglik_at_input, new_weights, new_probs, max_abs_change)
    where loglik is the capture-truncated value at the input parameters.
    """
    pc = np.clip(probs, eps, 1.0 - eps)
    bmask = bits.astype(bool)
    cond = np.where(bmask[None, :, :], pc[:, None, :], 1.0 - pc[:, None, :]).prod(axis=2)
    cell = weights @ cond
    p0 = cell[0]
    n = counts.sum()
    ll = float(counts @ np.log(cell)) - n * float(np.log1p(-p0))

    posts = weights[:, None] * cond / cell
    z = posts * counts[None, :]
    z[:, 0] = (n * p0 / (1.0 - p0)) * posts[:, 0]

    class_tot = z.sum(axis=1)
    new_w = class_tot / class_tot.sum()
    denom = np.maximum(class_tot, 1e-300)
    new_p = (z @ bits.astype(np.float64)) / denom[:, None]

    dmax = max(
        float(np.abs(new_w - weights).max()),
        float(np.abs(new_p - probs).max()),
    )
    return ll, new_w, new_p, dmax
