"""Third and fourth derivative tensors at the mode and closed-form
approximations built from them.

Replacing ``delta`` by its Taylor polynomial
``T3[x,x,x]/6 + T4[x,x,x,x]/24`` turns the sampling estimators into finite
sums over tensor entries via Gaussian moment (Isserlis) identities.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .laplace import StandardizedTarget

#: Default dimension guard for dense fourth-order tensors.
TENSOR_DIM_GUARD = 150

_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


def symmetrize(t: np.ndarray) -> np.ndarray:
    """Average an array over all permutations of its axes."""
    axes = range(t.ndim)
    perms = list(permutations(axes))
    out = np.zeros_like(t, dtype=float)
    for pm in perms:
        out += np.transpose(t, pm)
    out /= len(perms)
    return out


@dataclass(frozen=True)
class SymTensor3:
    """Fully symmetric third-order coefficient array."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=float)
        if a.ndim != 3 or len(set(a.shape)) != 1:
            raise ValueError("SymTensor3 needs a (p, p, p) array")
        object.__setattr__(self, "data", a)

    @property
    def dim(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class SymTensor4:
    """Fully symmetric fourth-order coefficient array."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=float)
        if a.ndim != 4 or len(set(a.shape)) != 1:
            raise ValueError("SymTensor4 needs a (p, p, p, p) array")
        object.__setattr__(self, "data", a)

    @property
    def dim(self) -> int:
        return self.data.shape[0]


def compute_tensors(st: StandardizedTarget, method: str = "analytic",
                    max_dim: int = TENSOR_DIM_GUARD) -> tuple[SymTensor3, SymTensor4]:
    """Standardized derivative tensors ``phi_tilde^(3)(0)`` and ``phi_tilde^(4)(0)``.

    Parameters
    ----------
    st : StandardizedTarget
    method : {"analytic", "finite_diff"}
        ``analytic`` contracts the base model's exact higher derivatives
        with the columns of ``L``; ``finite_diff`` differentiates the
        standardized Hessian by central differences.
    max_dim : int
        Refuse dimensions above this guard.
    """
    p = st.dim
    if p > max_dim:
        raise ValueError(
            f"p = {p} exceeds the tensor guard {max_dim}; use the sampling estimators instead"
        )
    if method == "analytic":
        if not st.base.analytic_higher_derivs:
            raise ValueError("analytic tensors need a target with analytic higher derivatives")
        mu, L = st.laplace.mu, st.laplace.factor
        t3 = st.base.third_tensor(mu, L)
        t4 = st.base.fourth_tensor(mu, L)
    elif method == "finite_diff":
        t3, t4 = _fd_tensors(st)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SymTensor3(symmetrize(t3)), SymTensor4(symmetrize(t4))


def _fd_tensors(st):
    p = st.dim
    h = _FD_STEP
    eye = np.eye(p)
    t3 = np.empty((p, p, p))
    for k in range(p):
        t3[:, :, k] = (st.hess_tilde(h * eye[k]) - st.hess_tilde(-h * eye[k])) / (2.0 * h)
    t4 = np.empty((p, p, p, p))
    for k in range(p):
        for m in range(k, p):
            a, b = h * eye[k], h * eye[m]
            d2 = (st.hess_tilde(a + b) - st.hess_tilde(a - b) - st.hess_tilde(-a + b)
                  + st.hess_tilde(-a - b)) / (4.0 * h * h)
            t4[:, :, k, m] = d2
            t4[:, :, m, k] = d2
    return t3, t4


def _arrays(T3, T4):
    a3 = T3.data if isinstance(T3, SymTensor3) else np.asarray(T3, dtype=float)
    a4 = T4.data if isinstance(T4, SymTensor4) else np.asarray(T4, dtype=float)
    p = a3.shape[0]
    if a3.shape != (p, p, p) or a4.shape != (p, p, p, p):
        raise ValueError(f"tensor dimensions do not match: {a3.shape} and {a4.shape}")
    return a3, a4


@dataclass(frozen=True)
class TensorSums:
    """Squared norms and partial traces shared by both closed forms."""

    p: int
    t3_sq: float        # sum T3_ijk^2
    t3_trace_sq: float  # sum_i (sum_j T3_ijj)^2
    t4_sq: float        # sum T4_ijkl^2
    t4_trace_sq: float  # sum_ij (sum_k T4_ijkk)^2
    t4_full_trace: float  # sum_ij T4_iijj


def tensor_sums(T3, T4) -> TensorSums:
    a3, a4 = _arrays(T3, T4)
    tr3 = np.einsum("ijj->i", a3)
    tr4 = np.einsum("ijkk->ij", a4)
    return TensorSums(
        p=a3.shape[0],
        t3_sq=float(np.sum(a3 * a3)),
        t3_trace_sq=float(tr3 @ tr3),
        t4_sq=float(np.sum(a4 * a4)),
        t4_trace_sq=float(np.sum(tr4 * tr4)),
        t4_full_trace=float(np.trace(tr4)),
    )


def taylor_klvar(T3, T4) -> float:
    """Gaussian variance of the cubic-plus-quartic Taylor polynomial.

    ``(1/6) sum T3^2 + (1/4) sum_i (sum_j T3_ijj)^2
    + (1/24) sum T4^2 + (1/8) sum_ij (sum_k T4_ijkk)^2``.

    This approximates the full KL-variance; halve it to compare with
    :func:`~laplace_audit.diagnostics.estimate_klvar`.
    """
    s = tensor_sums(T3, T4)
    return s.t3_sq / 6.0 + s.t3_trace_sq / 4.0 + s.t4_sq / 24.0 + s.t4_trace_sq / 8.0


def taylor_lsi(T3, T4) -> float:
    """Taylor approximation of the radial log-Sobolev term."""
    s = tensor_sums(T3, T4)
    return (0.75 * s.t3_sq + 1.125 * s.t3_trace_sq + s.t4_sq / 3.0 + s.t4_trace_sq
            + 0.125 * s.t4_full_trace**2) / s.p


def taylor_polynomial(T3, T4, x) -> np.ndarray:
    """Evaluate ``T3[x,x,x]/6 + T4[x,x,x,x]/24`` row-wise."""
    a3, a4 = _arrays(T3, T4)
    x = np.atleast_2d(x)
    c3 = np.einsum("ijk,ni,nj,nk->n", a3, x, x, x, optimize=True)
    c4 = np.einsum("ijkl,ni,nj,nk,nl->n", a4, x, x, x, x, optimize=True)
    return c3 / 6.0 + c4 / 24.0
