"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import backward


def finite_diff_check(loss_fn, params, epsilon: float = 1e-5, n_coords: int = 50, seed: int = 0,
                      names=None) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn()`` must rebuild the loss Tensor from the current parameter
    values.  Coordinates are sampled uniformly over the (optionally
    restricted) set of named parameters.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    first = loss_fn()
    if float(loss_fn().data) != float(first.data):
        raise RuntimeError("loss_fn is not deterministic")
    names = list(params.names() if names is None else names)
    analytic = backward(first, {n: params[n] for n in names})

    sizes = np.array([params[n].data.size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    for flat in sorted(picks):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[k]
        local = int(flat - offsets[k])
        data = params[name].data
        idx = np.unravel_index(local, data.shape)
        orig = data[idx]
        data[idx] = orig + epsilon
        up = float(loss_fn().data)
        data[idx] = orig - epsilon
        down = float(loss_fn().data)
        data[idx] = orig
        cd = (up - down) / (2.0 * epsilon)
        an = float(analytic[name][idx])
        err = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
        worst = max(worst, err)
    return worst
