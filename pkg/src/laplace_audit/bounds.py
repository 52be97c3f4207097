"""Non-sampling guarantees: third-derivative bounds, a certified radial
curvature, the rigorous radial KL bound, Pinsker and coverage intervals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import KlEstimate, radial_fisher_terms
from .laplace import LaplaceApprox, StandardizedTarget
from .targets import LOGISTIC_THIRD_MAX, LogisticDataset


def delta3_upper_logistic(data: LogisticDataset, laplace: LaplaceApprox) -> float:
    """Upper bound on the standardized third-derivative norm of a logistic posterior.

    Sums ``max|l'''| * |L' x_i|^3`` over data points; the Gaussian prior
    contributes nothing. ``max|l'''| = 1/(6 sqrt 3)``.
    """
    if data.n == 0:
        return 0.0
    z = data.X @ laplace.factor
    return float(LOGISTIC_THIRD_MAX * np.sum(np.linalg.norm(z, axis=1) ** 3))


@dataclass(frozen=True)
class CurvatureBound:
    """Certified lower bound on the radial log-curvature in ``c = r^(1/3)``.

    Attributes
    ----------
    p : int
    delta3 : float
    psi_min_second : float
    branch : str
        One of ``gaussian_limit``, ``c0_branch``, ``large_delta_branch``,
        ``fixed_point_branch``.
    r_infinity : float
        Fixed point of the radius recursion, NaN when not applicable.
    iterates : tuple
        The recursion iterates, empty when not applicable.
    candidates : dict
        Value of every applicable branch.
    """

    p: int
    delta3: float
    psi_min_second: float
    branch: str
    r_infinity: float = float("nan")
    iterates: tuple = ()
    candidates: dict | None = None


def gaussian_curvature(p: int) -> float:
    """Curvature bound when the target is exactly Gaussian."""
    return 45.0 * 0.1 ** (2.0 / 3.0) * ((3.0 * p - 1.0) / 3.0) ** (2.0 / 3.0)


def large_delta_threshold(p: int) -> float:
    return float(np.sqrt(3.0 / (2.0 * (3.0 * p - 1.0))))


def fixed_point_threshold(p: int) -> float:
    return float(np.sqrt(1000.0 / (441.0 * (3.0 * p - 1.0))))


def radius_recursion(p: int, delta3: float, rtol: float = 1e-12, max_iter: int = 10_000):
    """Iterates of ``r <- sqrt(((3p-1)/3 + 14 D r^3) / 10)`` from ``sqrt((3p-1)/30)``."""
    a = (3.0 * p - 1.0) / 3.0
    r = np.sqrt(a / 10.0)
    its = [r]
    for _ in range(max_iter):
        r_new = np.sqrt((a + 14.0 * delta3 * r**3) / 10.0)
        its.append(r_new)
        if abs(r_new - r) <= rtol * r_new:
            break
        r = r_new
    return its


def psi_min_second(p: int, delta3: float) -> CurvatureBound:
    """Lower bound on the minimum of ``psi_f''(c | e)`` over ``c``.

    Takes the minimum over the applicable branch bounds:

    * ``c0_branch``: ``(3p-1) D^(2/3) + 3 D^(-4/3)``;
    * ``large_delta_branch``: ``(9/2) ((2/3)(3p-1))^(1/3) / D^(2/3)``
      when ``D > sqrt(3 / (2(3p-1)))``;
    * ``fixed_point_branch``: ``r^(4/3) (15 + (3p-1)/r^2) - 12 D r^(7/3)``
      at the fixed point of :func:`radius_recursion`, when
      ``D <= sqrt(1000 / (441 (3p-1)))``.

    ``D = 0`` returns the Gaussian value ``45 (1/10)^(2/3) ((3p-1)/3)^(2/3)``.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if delta3 < 0:
        raise ValueError("delta3 must be nonnegative")
    if delta3 == 0.0:
        g = gaussian_curvature(p)
        return CurvatureBound(p, 0.0, g, "gaussian_limit", float(np.sqrt((3.0 * p - 1.0) / 30.0)),
                              (), {"gaussian_limit": g})
    q = 3.0 * p - 1.0
    d = float(delta3)
    cands = {"c0_branch": q * d ** (2.0 / 3.0) + 3.0 * d ** (-4.0 / 3.0)}
    if d > large_delta_threshold(p):
        cands["large_delta_branch"] = 4.5 * ((2.0 / 3.0) * q) ** (1.0 / 3.0) / d ** (2.0 / 3.0)
    r_inf, its = float("nan"), ()
    if d <= fixed_point_threshold(p):
        its = tuple(radius_recursion(p, d))
        r_inf = its[-1]
        cands["fixed_point_branch"] = r_inf ** (4.0 / 3.0) * (15.0 + q / r_inf**2) - 12.0 * d * r_inf ** (7.0 / 3.0)
    branch = min(cands, key=cands.get)
    return CurvatureBound(p, d, cands[branch], branch, r_inf, its, cands)


def radial_kl_bound(st: StandardizedTarget, cb: CurvatureBound, s: int = 50_000, rng=None) -> KlEstimate:
    """Rigorous radial KL bound ``(9 / (2 psi)) E[r^(4/3) (e' grad - r)^2]``."""
    if not cb.psi_min_second > 0:
        raise ValueError("curvature bound is not positive: the radial bound is vacuous")
    if s < 100:
        raise ValueError("radial_kl_bound needs s >= 100")
    v = radial_fisher_terms(st, s, rng)
    scale = 9.0 / (2.0 * cb.psi_min_second)
    return KlEstimate(scale * float(v.mean()), scale * float(v.std(ddof=1) / np.sqrt(s)), s,
                      "radial_kl_bound")


def binary_kl(a: float, b: float) -> float:
    """``a log(a/b) + (1-a) log((1-a)/(1-b))`` with the 0 log 0 = 0 convention."""
    out = 0.0
    if a > 0:
        out += a * np.log(a / b) if b > 0 else np.inf
    if a < 1:
        out += (1 - a) * np.log((1 - a) / (1 - b)) if b < 1 else np.inf
    return float(out)


def coverage_bounds(p_g: float, kl: float, tol: float = 1e-10) -> tuple[float, float]:
    """Range of ``p_f`` compatible with ``binary_kl(p_g, p_f) <= kl``.

    A region holding probability ``p_g`` under the approximation holds a
    probability in the returned interval under the target.
    """
    if not 0.0 < p_g < 1.0:
        raise ValueError("p_g must lie strictly between 0 and 1")
    if kl < 0:
        raise ValueError("kl must be nonnegative")
    if kl == 0:
        return float(p_g), float(p_g)

    def solve(lo, hi, inside_is_lo):
        # invariant: the endpoint on the p_g side satisfies the constraint
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            ok = binary_kl(p_g, mid) <= kl
            if ok == inside_is_lo:
                lo = mid
            else:
                hi = mid
        return lo if inside_is_lo else hi

    lower = 0.0 if binary_kl(p_g, 0.0) <= kl else solve(0.0, p_g, inside_is_lo=False)
    upper = 1.0 if binary_kl(p_g, 1.0) <= kl else solve(p_g, 1.0, inside_is_lo=True)
    return float(lower), float(upper)


def pinsker_tv_bound(kl: float) -> float:
    """Total-variation bound ``min(1, sqrt(kl / 2))``."""
    if kl < 0:
        raise ValueError("kl must be nonnegative")
    return float(min(1.0, np.sqrt(kl / 2.0)))
