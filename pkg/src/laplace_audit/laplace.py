"""MAP search, Laplace approximation and the standardized target.

The standardized coordinates are ``theta = mu + L theta_tilde`` with ``L`` the
lower-triangular factor of the Laplace covariance. In these coordinates the
Laplace approximation is the standard normal and the log-density gap is

    delta(theta_tilde) = phi_tilde(theta_tilde) - phi_tilde(0) - |theta_tilde|^2 / 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .targets import TargetDensity


class NotPositiveDefiniteError(ValueError):
    """A Hessian that should be SPD is not."""


class ConvergenceError(RuntimeError):
    """The optimizer exhausted its iteration budget."""


@dataclass
class MapResult:
    """Outcome of :func:`find_map` with the accepted-iterate history."""

    mu: np.ndarray
    grad_norm: float
    n_iter: int
    phi_trace: list = field(default_factory=list)


def find_map(target: TargetDensity, init=None, tol: float = 1e-9, max_iter: int = 200,
             return_info: bool = False):
    """Minimize ``phi`` by damped Newton with Armijo backtracking.

    Parameters
    ----------
    target : TargetDensity
    init : array_like, optional
        Starting point, zero by default.
    tol : float
        Relative tolerance: stop when
        ``|grad| <= tol * (1 + |grad(init)|)``.
    max_iter : int
    return_info : bool
        Return a :class:`MapResult` instead of the bare mode.

    Raises
    ------
    NotPositiveDefiniteError
        If a Hessian along the path is not positive definite.
    ConvergenceError
        If ``max_iter`` is exceeded.
    """
    p = target.dim
    x = np.zeros(p) if init is None else np.array(init, dtype=float).reshape(p)
    g = target.grad(x)
    f = target.phi(x)
    thresh = tol * (1.0 + np.linalg.norm(g))
    trace = [f]
    it = 0
    while np.linalg.norm(g) > thresh:
        if it >= max_iter:
            raise ConvergenceError(
                f"find_map: {max_iter} iterations exceeded, last |grad| = {np.linalg.norm(g):.3e}"
            )
        step = _newton_step(target, x, g, it)
        slope = g @ step
        t = 1.0
        while True:
            x_new = x + t * step
            f_new = target.phi(x_new)
            if f_new <= f + 1e-4 * t * slope and f_new < f:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            # no representable decrease left; the iterate is at round-off level
            break
        x, f = x_new, f_new
        g = target.grad(x)
        trace.append(f)
        it += 1
    # polishing: quadratic convergence usually removes the last digits cheaply
    for _ in range(3):
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        try:
            x_new = x + _newton_step(target, x, g, it)
        except NotPositiveDefiniteError:
            break
        g_new = target.grad(x_new)
        if np.linalg.norm(g_new) < 0.5 * gn and target.phi(x_new) <= f:
            x, g, f = x_new, g_new, target.phi(x_new)
        else:
            break
    res = MapResult(mu=x, grad_norm=float(np.linalg.norm(g)), n_iter=it, phi_trace=trace)
    return res if return_info else x


def _newton_step(target, x, g, it):
    H = target.hess(x)
    try:
        c = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            f"Hessian not positive definite at iterate {it}: theta = {np.array2string(x, precision=6)}"
        ) from None
    y = solve_triangular(c, -g, lower=True)
    return solve_triangular(c.T, y, lower=False)


@dataclass(frozen=True)
class LaplaceApprox:
    """Gaussian approximation ``N(mu, Sigma)`` with ``Sigma = L L' = H^-1``.

    Attributes
    ----------
    mu : ndarray (p,)
    precision : ndarray (p, p)
        Hessian of ``phi`` at ``mu``.
    factor : ndarray (p, p)
        Lower-triangular ``L``.
    log_det_sigma : float
    grad_norm : float
        Gradient norm at ``mu`` recorded at construction.
    jitter : float
        Diagonal jitter added to the precision, 0 if none was needed.
    """

    mu: np.ndarray
    precision: np.ndarray
    factor: np.ndarray
    log_det_sigma: float
    grad_norm: float = 0.0
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def log_z_g(self) -> float:
        return 0.5 * self.dim * np.log(2.0 * np.pi) + 0.5 * self.log_det_sigma

    @property
    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def to_json(self) -> str:
        """Serialize with explicit row-major matrix layout."""
        def mat(a):
            return {"rows": a.shape[0], "cols": a.shape[1], "layout": "row-major",
                    "data": [float(v) for v in a.ravel(order="C")]}

        doc = {
            "dim": self.dim,
            "mu": [float(v) for v in self.mu],
            "precision": mat(self.precision),
            "factor": mat(self.factor),
            "log_det_sigma": float(self.log_det_sigma),
            "log_z_g": float(self.log_z_g),
            "grad_norm": float(self.grad_norm),
            "jitter": float(self.jitter),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LaplaceApprox":
        doc = json.loads(text)

        def mat(d):
            return np.array(d["data"], dtype=float).reshape(d["rows"], d["cols"])

        return cls(np.array(doc["mu"], dtype=float), mat(doc["precision"]), mat(doc["factor"]),
                   doc["log_det_sigma"], doc.get("grad_norm", 0.0), doc.get("jitter", 0.0))


def _lower_inverse_factor(H):
    """Lower-triangular ``L`` with ``L L' = H^-1`` and ``log det H``.

    Factor the index-reversed matrix ``J H J = C C'`` so that
    ``L = J C^-T J`` comes out lower triangular.
    """
    p = H.shape[0]
    rev = np.arange(p)[::-1]
    C = np.linalg.cholesky(H[np.ix_(rev, rev)])
    Cinv_T = solve_triangular(C, np.eye(p), lower=True).T
    L = Cinv_T[np.ix_(rev, rev)]
    return L, 2.0 * np.sum(np.log(np.diag(C)))


def build_laplace(target: TargetDensity, mu) -> LaplaceApprox:
    """Laplace approximation at the stationary point ``mu``.

    A single jitter retry with ``1e-10 * trace(H) / p`` on the diagonal is
    allowed and recorded in ``jitter``.

    Raises
    ------
    NotPositiveDefiniteError
        If the Hessian at ``mu`` is not SPD even after jitter.
    """
    mu = np.asarray(mu, dtype=float).reshape(target.dim)
    H = np.asarray(target.hess(mu), dtype=float)
    H = 0.5 * (H + H.T)
    jitter = 0.0
    try:
        L, logdet_h = _lower_inverse_factor(H)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(H) / H.shape[0]
        try:
            if not jitter > 0:
                raise np.linalg.LinAlgError
            H = H + jitter * np.eye(H.shape[0])
            L, logdet_h = _lower_inverse_factor(H)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(
                "Hessian at the mode is not positive definite: target is not strictly log-concave there"
            ) from None
    gnorm = float(np.linalg.norm(target.grad(mu)))
    return LaplaceApprox(mu, H, L, -logdet_h, gnorm, jitter)


class StandardizedTarget:
    """The target seen through the Laplace whitening ``theta = mu + L x``.

    Methods accept a single point of shape ``(p,)`` or a batch ``(m, p)``.
    """

    def __init__(self, base: TargetDensity, laplace: LaplaceApprox):
        self.base = base
        self.laplace = laplace
        self.dim = base.dim
        self._L = laplace.factor
        self._mu = laplace.mu
        self.phi0 = float(base.phi(self._mu))
        # a quadratic target standardized at its mode is exactly N(0, I)
        self.exact = bool(base.exactly_gaussian and laplace.jitter == 0.0
                          and laplace.grad_norm <= 1e-8 * (1.0 + abs(self.phi0)))

    def to_theta(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._mu + x @ self._L.T

    def to_tilde(self, theta) -> np.ndarray:
        d = np.asarray(theta, dtype=float) - self._mu
        return solve_triangular(self._L, d.T, lower=True).T

    def phi_tilde(self, x):
        x = np.asarray(x, dtype=float)
        if self.exact:
            return self.phi0 + 0.5 * (float(x @ x) if x.ndim == 1 else np.einsum("ij,ij->i", x, x))
        if x.ndim == 1:
            return float(self.base.phi(self.to_theta(x)))
        return self.base.phi_batch(self.to_theta(x))

    def grad_tilde(self, x):
        x = np.asarray(x, dtype=float)
        if self.exact:
            return x.copy()
        if x.ndim == 1:
            return self._L.T @ self.base.grad(self.to_theta(x))
        return self.base.grad_batch(self.to_theta(x)) @ self._L

    def hess_tilde(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        if self.exact:
            return np.eye(self.dim)
        return self._L.T @ self.base.hess(self.to_theta(x)) @ self._L

    def delta(self, x):
        """Log-density gap to the standard normal, zero at the origin."""
        x = np.asarray(x, dtype=float)
        if self.exact:
            return 0.0 if x.ndim == 1 else np.zeros(len(x))
        if x.ndim == 1:
            if not np.any(x):
                return 0.0
            return self.phi_tilde(x) - self.phi0 - 0.5 * float(x @ x)
        out = self.phi_tilde(x) - self.phi0 - 0.5 * np.einsum("ij,ij->i", x, x)
        out[~np.any(x, axis=1)] = 0.0
        return out

    def third_dir_tilde(self, x, v1, v2, v3) -> float:
        L = self._L
        return self.base.third_dir(self.to_theta(np.asarray(x, dtype=float)), L @ v1, L @ v2, L @ v3)

    def fourth_dir_tilde(self, x, v1, v2, v3, v4) -> float:
        L = self._L
        return self.base.fourth_dir(self.to_theta(np.asarray(x, dtype=float)),
                                    L @ v1, L @ v2, L @ v3, L @ v4)


def standardize(target: TargetDensity, laplace: LaplaceApprox) -> StandardizedTarget:
    """Wrap ``target`` in the whitened coordinates of ``laplace``."""
    return StandardizedTarget(target, laplace)


def fit_laplace(target: TargetDensity, init=None, tol: float = 1e-9, max_iter: int = 200):
    """Convenience: MAP, Laplace approximation and standardized target."""
    mu = find_map(target, init=init, tol=tol, max_iter=max_iter)
    lap = build_laplace(target, mu)
    return lap, StandardizedTarget(target, lap)
