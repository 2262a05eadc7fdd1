"""Central finite-difference check of taped gradients."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import backward, no_grad


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)  # name -> max relative error
    tol: float = 1e-4

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tol

    def __str__(self):
        lines = [f"{'PASS' if self.passed else 'FAIL'} max rel err {self.max_error:.3e} (tol {self.tol:g})"]
        lines += [f"  {k}: {v:.3e}" for k, v in self.errors.items()]
        return "\n".join(lines)


def numeric_grad(forward, param, eps=1e-5, entries=None):
    """Central differences of ``forward()`` w.r.t. ``param``.

    Returns an array shaped like ``param`` when ``entries`` is None, otherwise
    one value per flat index in ``entries``.
    """
    flat = param.values.reshape(-1)
    full = entries is None
    entries = np.arange(flat.size) if full else np.asarray(entries)
    out = np.empty(len(entries))
    with no_grad():
        for j, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + eps
            fp = forward().item()
            flat[i] = orig - eps
            fm = forward().item()
            flat[i] = orig
            out[j] = (fp - fm) / (2 * eps)
    return out.reshape(param.shape) if full else out


def grad_check(forward, params, eps=1e-5, tol=1e-4, max_entries=None, seed=0, analytic=None):
    """Compare autodiff gradients of a scalar ``forward()`` with central differences.

    ``params`` is a mapping name -> Tensor (or a sequence, named by index).
    The per-parameter error is ``max|a - n| / max(max|a|, max|n|)`` over the
    checked entries, i.e. relative to the tensor's gradient scale, which keeps
    near-zero entries from dominating. ``max_entries`` samples that many flat
    entries per tensor. ``analytic`` overrides the autodiff gradients
    (name -> array, or a sequence), for negative controls.
    """
    if not isinstance(params, dict):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    loss = forward()
    backward(loss)
    grads = {k: p.grad.copy() for k, p in params.items()}
    if analytic is not None:
        if not isinstance(analytic, dict):
            analytic = {str(i): g for i, g in enumerate(analytic)}
        grads.update({k: np.asarray(v, dtype=np.float64) for k, v in analytic.items()})
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        size = p.values.size
        if max_entries is not None and size > max_entries:
            entries = np.sort(rng.choice(size, max_entries, replace=False))
        else:
            entries = np.arange(size)
        n = numeric_grad(forward, p, eps, entries)
        a = grads[name].reshape(-1)[entries]
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
        diff = np.abs(a - n).max(initial=0.0)
        report.errors[name] = 0.0 if diff == 0.0 else diff / max(scale, 1e-300)
    return report
