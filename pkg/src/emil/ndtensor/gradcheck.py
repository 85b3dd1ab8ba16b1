"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, inputs: list, eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` maps the given tensors to a scalar Tensor and must be pure.
    Inputs must be float64 leaves with ``requires_grad`` set; ``eps`` is the
    central-difference step.  Returns the maximum over all elements of

        |analytic - numeric| / max(1, |analytic|, |numeric|)
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 inputs, got {t.dtype}")
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require gradients")

    loss = fn(*inputs)
    if loss.data.ndim != 0:
        raise ValueError("grad_check target must return a scalar")
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss in grad_check")
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*inputs).item()
            flat[i] = orig - eps
            lo = fn(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError("non-finite value during finite differencing")
            numeric = (hi - lo) / (2 * eps)
            a = ana.ravel()[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
