"""Central finite-difference gradient checking.

Compares analytic gradients against (f(x+h) - f(x-h)) / 2h in float64 using
the relative error |a - n| / max(|a|, |n|, 1e-3). For large parameter sets a
random subset of coordinates per tensor keeps the check affordable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              tol: float = 1e-4, max_coords: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Check d fn / d inputs; returns the worst relative error seen.

    ``fn`` must rebuild its graph from the current ``inputs`` data on every
    call. Inputs should be float64 for the h=1e-5 default to be meaningful.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn()
    out.backward()
    analytic = []
    for t in inputs:
        if t.grad is None:
            raise RuntimeError("input received no gradient; graph is disconnected")
        analytic.append(t.grad.copy())
        t.grad = None

    worst = 0.0
    for t, a in zip(inputs, analytic):
        n = t.data.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        flat = t.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            ana = float(a.reshape(-1)[c])
            # retry with smaller steps if h straddles a ReLU kink; the FD
            # estimate is only an oracle where f is locally smooth
            rel = np.inf
            for step in (h, h / 10.0, h / 100.0):
                flat[c] = orig + step
                fp = float(fn().data)
                flat[c] = orig - step
                fm = float(fn().data)
                flat[c] = orig
                num = (fp - fm) / (2.0 * step)
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-3)
                if rel <= tol:
                    break
            worst = max(worst, rel)
            if rel > tol:
                raise AssertionError(
                    f"gradcheck failed at coord {c} of shape {t.data.shape}: "
                    f"analytic={ana:.6e} numeric={num:.6e} rel={rel:.3e}")
    return worst
