"""Wendland C2 smoothing kernel, full-order (3D) and reduced-order (1D).

Both variants share the shape ``(1 + 2q)(1 - q/2)^4`` on ``q = r/h`` in
``[0, 2]`` and differ only in the normalising constant.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelSpec:
    h: float
    dim: int = 3

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"smoothing length must be positive, got {self.h}")
        if self.dim not in (1, 3):
            raise ValueError(f"kernel dimension must be 1 or 3, got {self.dim}")

    @property
    def cutoff(self) -> float:
        return 2.0 * self.h

    @property
    def alpha(self) -> float:
        if self.dim == 1:
            return 3.0 / (4.0 * self.h)
        return 21.0 / (16.0 * np.pi * self.h**3)


def w_value(r, spec: KernelSpec):
    """Kernel value W(r, h); exactly zero for r >= 2h."""
    q = np.asarray(r, dtype=float) / spec.h
    inside = q < 2.0
    qc = np.where(inside, q, 2.0)
    val = spec.alpha * (1.0 + 2.0 * qc) * (1.0 - 0.5 * qc) ** 4
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def w_radial_derivative(r, spec: KernelSpec):
    """dW/dr.  Non-positive on the support, zero at r = 0 and r >= 2h."""
    q = np.asarray(r, dtype=float) / spec.h
    inside = q < 2.0
    qc = np.where(inside, q, 2.0)
    # d/dq [(1+2q)(1-q/2)^4] = -5 q (1-q/2)^3
    val = spec.alpha * (-5.0 * qc) * (1.0 - 0.5 * qc) ** 3 / spec.h
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def w_derivative_over_r(r, spec: KernelSpec):
    """``(dW/dr) / r`` with its finite limit ``-5 alpha / h^2`` at r = 0."""
    q = np.asarray(r, dtype=float) / spec.h
    inside = q < 2.0
    qc = np.where(inside, q, 2.0)
    val = spec.alpha * (-5.0) * (1.0 - 0.5 * qc) ** 3 / spec.h**2
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)
