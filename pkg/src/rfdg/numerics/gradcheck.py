"""Central finite-difference oracle for reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .tensor import grad

DEFAULT_EPS = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-6}


def _eval(fn):
    val = fn()
    v = float(np.asarray(getattr(val, "data", val)).reshape(()))
    if not np.isfinite(v):
        raise NumericalError(f"finite_diff_check: function value is {v}")
    return v


def finite_diff_errors(fn, params, epsilon=None, max_coords=None, seed=0, exclude=None):
    """Per-parameter max relative error between analytic and numerical gradients.

    Args:
        fn: zero-argument callable returning a scalar Tensor built from ``params``.
        params: leaf tensors to perturb (must require grad).
        epsilon: perturbation size; defaults by dtype (1e-3 f32, 1e-6 f64).
        max_coords: if set, check at most this many coordinates per parameter,
            chosen with ``seed``.
        exclude: optional ``{param_index: bool mask}`` of coordinates to skip,
            e.g. inputs sitting exactly on a ReLU kink.

    Returns:
        list of floats, one per parameter. The relative error of a coordinate is
        ``|analytic - central| / max(1, |central|)``.
    """
    params = list(params)
    analytic = [g.copy() for g in grad(fn(), params)]
    rng = np.random.default_rng(seed)
    errors = []
    for i, p in enumerate(params):
        eps = epsilon if epsilon is not None else DEFAULT_EPS.get(p.dtype, 1e-6)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if exclude is not None and i in exclude:
            coords = coords[~np.asarray(exclude[i]).reshape(-1)]
        if max_coords is not None and coords.size > max_coords:
            coords = np.sort(rng.choice(coords, size=max_coords, replace=False))
        worst = 0.0
        ga = analytic[i].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = _eval(fn)
            flat[c] = orig - eps
            fm = _eval(fn)
            flat[c] = orig
            cd = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(ga[c] - cd) / max(1.0, abs(cd)))
        errors.append(worst)
    return errors


def finite_diff_check(fn, params, epsilon=None, **kwargs):
    """Max relative gradient error over all checked coordinates of ``params``."""
    errs = finite_diff_errors(fn, params, epsilon, **kwargs)
    return max(errs) if errs else 0.0
