"""Shared finite-difference helpers for the test modules."""

import numpy as np

from weca import diffcore as dc


def grad_of(fn, *params):
    for p in params:
        p.grad = None
    with dc.Tape() as tape:
        out = fn()
    tape.backward(out)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def max_fd_error(fn, params, step=1e-5):
    """Largest relative error between analytic and central-difference gradients."""
    analytic = grad_of(fn, *params)
    worst = 0.0
    for p, g in zip(params, analytic):
        numeric = dc.numeric_gradient(lambda: fn().item(), p, step=step)
        worst = max(worst, dc.relative_error(g, numeric))
    return worst
