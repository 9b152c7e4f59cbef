"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    per_input: list = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} (tol={self.tol:.1e})"


def gradcheck(f, inputs, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar `f(*inputs)` with central differences.

    `inputs` is a sequence of array-likes; every coordinate of every input
    is perturbed by +-h. Relative error uses max(1, |analytic|, |numeric|)
    as the denominator so near-zero gradients are judged absolutely.
    """
    tensors = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
               for x in inputs]
    out = f(*tensors)
    if not np.isfinite(out.data).all():
        raise NumericError("gradcheck: non-finite loss at the base point")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    worst = 0.0
    per_input = []
    for idx, t in enumerate(tensors):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(f(*tensors).data)
            flat[j] = orig - h
            fm = float(f(*tensors).data)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(
                    f"gradcheck: non-finite loss while perturbing input {idx}"
                )
            nflat[j] = (fp - fm) / (2.0 * h)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic[idx]),
                                           np.abs(numeric)))
        err = float((np.abs(analytic[idx] - numeric) / denom).max()) \
            if numeric.size else 0.0
        per_input.append(err)
        worst = max(worst, err)
    return GradCheckReport(max_rel_err=worst, passed=worst <= tol,
                           tol=tol, per_input=per_input)
