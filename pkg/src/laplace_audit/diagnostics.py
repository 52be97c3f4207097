"""Sampling approximations of the reverse KL divergence KL(g, f).

All estimators draw from the Laplace approximation ``g`` in standardized
coordinates and return a :class:`KlEstimate` carrying a Monte Carlo
standard error. Draws are generated in chunks from child streams, so the
numbers do not depend on how the work is split.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_stream, chunked_normals
from .laplace import StandardizedTarget

#: Number of batches for batch-means standard errors.
N_BATCHES = 100

DIAGNOSTIC_NAMES = ("klvar", "lsi", "var_elbo", "klvar_plus_lsi", "varelbo_plus_lsi")


@dataclass(frozen=True)
class KlEstimate:
    """A Monte Carlo estimate in nats.

    Attributes
    ----------
    value : float
    std_error : float
    n_samples : int
    estimator_name : str
    notes : str
        Free-form warnings, empty when there are none.
    """

    value: float
    std_error: float
    n_samples: int
    estimator_name: str
    notes: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"{self.estimator_name}: non-finite value")
        if self.estimator_name in DIAGNOSTIC_NAMES and self.value < 0:
            raise ValueError(f"{self.estimator_name}: negative value {self.value}")
        if not self.std_error >= 0:
            raise ValueError(f"{self.estimator_name}: invalid std_error {self.std_error}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")

    def as_dict(self) -> dict:
        return {"estimator": self.estimator_name, "value": self.value,
                "std_error": self.std_error, "n_samples": self.n_samples, "notes": self.notes}


def _check_finite(vals, draws, start, what="delta"):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise FloatingPointError(
            f"non-finite {what} at draw {start + i}: theta_tilde = {np.array2string(draws[i], precision=6)}"
        )


def sample_deltas(st: StandardizedTarget, s: int, rng, return_draws: bool = False):
    """Evaluate ``delta`` at ``s`` standard normal draws."""
    out = np.empty(s)
    draws = np.empty((s, st.dim)) if return_draws else None
    for start, x in chunked_normals(st.dim, s, rng):
        d = st.delta(x)
        _check_finite(d, x, start)
        out[start:start + len(x)] = d
        if return_draws:
            draws[start:start + len(x)] = x
    return (out, draws) if return_draws else out


def batch_means_se(x, n_batches: int = N_BATCHES, stat=np.mean) -> float:
    """Standard error of ``stat`` over ``x`` by non-overlapping batches."""
    x = np.asarray(x)
    b = min(n_batches, len(x) // 2)
    if b < 2:
        return float("nan")
    m = len(x) // b
    vals = np.array([stat(x[i * m:(i + 1) * m]) for i in range(b)])
    return float(np.std(vals, ddof=1) / np.sqrt(b))


def klvar_from_deltas(deltas) -> KlEstimate:
    """Half the sample variance of ``delta`` with its batch-means error."""
    d = np.asarray(deltas, dtype=float)
    value = 0.5 * float(np.var(d, ddof=1))
    se = 0.5 * batch_means_se(d, stat=lambda v: np.var(v, ddof=1))
    return KlEstimate(value, se, d.size, "klvar")


def estimate_klvar(st: StandardizedTarget, s: int = 50_000, rng=None) -> KlEstimate:
    """Half the KL-variance, ``Var_g[delta] / 2``.

    Parameters
    ----------
    st : StandardizedTarget
    s : int
        Number of draws from the Laplace approximation, at least 100.
    rng : RngStream or int
    """
    if s < 100:
        raise ValueError("estimate_klvar needs s >= 100")
    return klvar_from_deltas(sample_deltas(st, s, rng))


def _lsi_integrand(st, x):
    if getattr(st, "exact", False):
        return np.zeros(len(x))
    r = np.linalg.norm(x, axis=1)
    g = st.grad_tilde(x)
    radial = np.einsum("ij,ij->i", x, g) / r - r
    return r ** (4.0 / 3.0) * radial * radial


def radial_fisher_terms(st: StandardizedTarget, s: int, rng) -> np.ndarray:
    """Samples of ``r^(4/3) (e' grad phi_tilde(r e) - r)^2`` under ``g``."""
    out = np.empty(s)
    for start, x in chunked_normals(st.dim, s, rng):
        v = _lsi_integrand(st, x)
        _check_finite(v, x, start, "radial Fisher term")
        out[start:start + len(x)] = v
    return out


def estimate_lsi(st: StandardizedTarget, s: int = 50_000, rng=None) -> KlEstimate:
    """Radial log-Sobolev term ``E[r^(4/3) (e' grad - r)^2] / (2 p^(2/3))``."""
    if s < 100:
        raise ValueError("estimate_lsi needs s >= 100")
    v = radial_fisher_terms(st, s, rng)
    scale = 1.0 / (2.0 * st.dim ** (2.0 / 3.0))
    return KlEstimate(scale * float(v.mean()), scale * float(v.std(ddof=1) / np.sqrt(s)), s, "lsi")


def _var_elbo_stat(D, correction):
    se, sr = D.shape
    row = D.mean(axis=1)
    v = np.var(row, ddof=1)
    if correction == "interaction":
        col = D.mean(axis=0)
        resid = D - row[:, None] - col[None, :] + D.mean()
        ms = np.sum(resid * resid) / ((se - 1) * (sr - 1))
        v -= ms / sr
    elif correction == "inner":
        v -= np.mean(np.var(D, axis=1, ddof=1)) / sr
    return 0.5 * v


def estimate_var_elbo(st: StandardizedTarget, s_e: int = 2000, s_r: int = 100, rng=None,
                      correction: str = "interaction") -> KlEstimate:
    """Half the variance over directions of the radial mean of ``delta``.

    Directions are uniform on the sphere; the same ``s_r`` chi radii are
    reused for every direction. The plain variance of the inner means is
    biased upward by the inner Monte Carlo noise. ``correction`` selects the
    adjustment:

    ``"interaction"``
        subtract the direction-by-radius interaction mean square over
        ``s_r``, the unbiased two-way ANOVA correction for a crossed design
        (default);
    ``"inner"``
        subtract the mean within-direction variance over ``s_r``, which is
        unbiased for independent radii but over-corrects for shared ones;
    ``"none"``
        no correction.

    The result is clipped at zero.
    """
    if s_e < 100:
        raise ValueError("estimate_var_elbo needs s_e >= 100")
    if s_r < 2:
        raise ValueError("estimate_var_elbo needs s_r >= 2 for the bias correction")
    if correction not in ("interaction", "inner", "none"):
        raise ValueError(f"unknown correction {correction!r}")
    rng = as_stream(rng)
    p = st.dim
    z_r = rng.child(1).standard_normal((s_r, p))
    radii = np.linalg.norm(z_r, axis=1)
    z_e = rng.child(2).standard_normal((s_e, p))
    dirs = z_e / np.linalg.norm(z_e, axis=1)[:, None]
    D = np.empty((s_e, s_r))
    chunk = max(1, 200_000 // s_r)
    for start in range(0, s_e, chunk):
        e = dirs[start:start + chunk]
        x = (e[:, None, :] * radii[None, :, None]).reshape(-1, p)
        d = st.delta(x)
        _check_finite(d, x, start * s_r)
        D[start:start + len(e)] = d.reshape(len(e), s_r)
    value = _var_elbo_stat(D, correction)
    b = min(N_BATCHES, s_e // 2)
    m = s_e // b
    batch_vals = np.array([_var_elbo_stat(D[i * m:(i + 1) * m], correction) for i in range(b)])
    se = float(np.std(batch_vals, ddof=1) / np.sqrt(b))
    notes = "" if value >= 0 else f"clipped from {value:.3e}"
    return KlEstimate(max(value, 0.0), se, s_e * s_r, "var_elbo", notes)


def _combine(a: KlEstimate, b: KlEstimate, name: str) -> KlEstimate:
    notes = "; ".join(n for n in (a.notes, b.notes) if n)
    return KlEstimate(a.value + b.value, float(np.hypot(a.std_error, b.std_error)),
                      min(a.n_samples, b.n_samples), name, notes)


def klvar_plus_lsi(st: StandardizedTarget, s: int = 50_000, rng=None) -> KlEstimate:
    """``KLvar / 2 + LSI`` with errors added in quadrature."""
    rng = as_stream(rng)
    return combine_klvar_lsi(estimate_klvar(st, s, rng.child(1)), estimate_lsi(st, s, rng.child(2)))


def combine_klvar_lsi(kv: KlEstimate, lsi: KlEstimate) -> KlEstimate:
    return _combine(kv, lsi, "klvar_plus_lsi")


def varelbo_plus_lsi(st: StandardizedTarget, s_e: int = 2000, s_r: int = 100, rng=None,
                     s_lsi: int | None = None) -> KlEstimate:
    """``VarELBO / 2 + LSI`` with errors added in quadrature."""
    rng = as_stream(rng)
    ve = estimate_var_elbo(st, s_e, s_r, rng.child(1))
    lsi = estimate_lsi(st, s_lsi or max(100, s_e * s_r // 4), rng.child(2))
    return _combine(ve, lsi, "varelbo_plus_lsi")
