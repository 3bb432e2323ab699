from __future__ import annotations

import numpy as np

from bentrank import BentLineParams, validate_dataset


def bent_data(n=200, sd=0.0, seed=0, params=None, z=None):
    """Case-1 style data: intercept column, z ~ U(-2, 2) unless given."""
    params = params or BentLineParams(np.array([3.0]), 2.5, -4.0, 0.5)
    rng = np.random.default_rng(seed)
    z = rng.uniform(-2, 2, n) if z is None else np.asarray(z, float)
    x = np.ones((z.size, 1))
    y = x @ params.alpha + params.beta * z + params.gamma * np.maximum(z - params.tau, 0) + params.offset
    return validate_dataset(y + sd * rng.standard_normal(z.size), x, z, x_names=("intercept",))
