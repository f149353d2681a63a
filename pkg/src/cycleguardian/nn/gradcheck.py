"""Central finite-difference certification of analytic gradients.

Runs in float64; each probed element is perturbed by +/-h and the analytic
gradient must match (f(x+h) - f(x-h)) / 2h within the stated relative error.
"""

import numpy as np

from .tensor import no_grad


def gradcheck(loss_fn, params, h=1e-3, rtol=1e-4, max_probes=16, rng=None):
    """Compare analytic and numeric gradients for each parameter tensor.

    loss_fn: () -> scalar Tensor, rebuilt on every call (fresh graph).
    params: list of (name, Tensor) pairs; tensors must be float64.
    Returns list of (name, flat_index, analytic, numeric, rel_err); raises
    AssertionError on the first violation.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for _, p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 parameters")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)) for name, p in params}
    records = []
    for name, p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        idxs = np.arange(n) if n <= max_probes else rng.choice(n, size=max_probes, replace=False)
        for i in idxs:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = float(loss_fn().data)
                flat[i] = orig - h
                fm = float(loss_fn().data)
                flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = analytic[name].reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            records.append((name, int(i), float(ana), float(num), float(rel)))
            if rel >= rtol:
                raise AssertionError(
                    f"gradcheck failed for {name}[{i}]: analytic={ana:.8g} numeric={num:.8g} rel={rel:.3g}"
                )
    return records
