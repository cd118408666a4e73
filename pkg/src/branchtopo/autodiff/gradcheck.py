"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, record_kinks


@dataclass
class GradcheckResult:
    max_rel_error: float  # over components away from kinks
    n_checked: int
    kinks: list = field(default_factory=list)  # flat indices excluded as kinks
    kink_errors: list = field(default_factory=list)
    errors: np.ndarray | None = None
    vanishing: list = field(default_factory=list)  # both sides below zero_tol
    max_abs_vanishing: float = 0.0
    zero_tol: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol and self.max_abs_vanishing <= max(self.zero_tol, 0.0)


def _decisions_equal(a, b):
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(f, x: Tensor, h: float = 1e-6, indices=None, zero_tol: float = 0.0) -> GradcheckResult:
    """Compare d f / d x by reverse mode against central differences.

    ``f`` maps the tensor ``x`` to a scalar Tensor.  Relative error per
    component is ``|a - b| / max(|a|, |b|, 1e-8)``.  A component whose two
    perturbed evaluations take different discrete branches (relu mask, max
    pick) straddles a kink: it is reported in ``kinks`` and excluded from
    ``max_rel_error``.  ``indices`` restricts the check to those flat entries.

    With ``zero_tol > 0``, components where both gradients are below it in
    magnitude (structurally zero, e.g. a shift followed by batchnorm) are
    checked in absolute terms instead: the relative error of two roundoff
    values carries no information.
    """
    x.requires_grad = True
    grads = backward(f(x), [x])
    analytic = grads[x].reshape(-1)
    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    errs, kinks, kink_errs, vanishing, van_abs = [], [], [], [], [0.0]
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        with record_kinks() as dec_plus:
            fp = float(f(x).data)
        flat[i] = orig - h
        with record_kinks() as dec_minus:
            fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = float(analytic[i])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        if not _decisions_equal(dec_plus, dec_minus):
            kinks.append(int(i))
            kink_errs.append(rel)
        elif max(abs(a), abs(numeric)) < zero_tol:
            vanishing.append(int(i))
            van_abs.append(abs(a - numeric))
        else:
            errs.append(rel)
    errors = np.array(errs)
    return GradcheckResult(
        max_rel_error=float(errors.max()) if errors.size else 0.0,
        n_checked=int(errors.size),
        kinks=kinks,
        kink_errors=kink_errs,
        errors=errors,
        vanishing=vanishing,
        max_abs_vanishing=max(van_abs),
        zero_tol=zero_tol,
    )
