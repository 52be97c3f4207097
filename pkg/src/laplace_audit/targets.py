"""Target densities ``f = exp(-phi)`` and synthetic logistic data.

A target exposes the negative log-density ``phi`` with its gradient and
Hessian, plus directional third and fourth derivatives. Models without
analytic higher derivatives fall back to finite differences of the
Hessian. Batched ``phi_batch`` / ``grad_batch`` evaluate many points at
once and are what the sampling estimators call.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .geometry import RngStream

#: Exact maximum of |s(1-s)(1-2s)| over the logistic function s.
LOGISTIC_THIRD_MAX = 1.0 / (6.0 * np.sqrt(3.0))

_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


def _vec(theta, p):
    x = np.asarray(theta, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (p,):
        raise ValueError(f"expected a vector of length {p}, got shape {x.shape}")
    return x


class TargetDensity:
    """Base class for unnormalized negative log-densities.

    Subclasses implement ``phi``, ``grad`` and ``hess`` for a single point.
    They may override the batched variants and the higher derivatives.

    Attributes
    ----------
    dim : int
        Dimension ``p``.
    analytic_higher_derivs : bool
        Whether ``third_dir`` / ``fourth_dir`` are exact.
    log_concave : bool
        Whether the model is globally log-concave.
    exactly_gaussian : bool
        Whether ``phi`` is an exact quadratic, so that its Laplace
        approximation is the target itself.
    """

    dim: int
    analytic_higher_derivs: bool = False
    log_concave: bool = True
    exactly_gaussian: bool = False

    def phi(self, theta) -> float:
        raise NotImplementedError

    def grad(self, theta) -> np.ndarray:
        raise NotImplementedError

    def hess(self, theta) -> np.ndarray:
        raise NotImplementedError

    def phi_batch(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        return np.array([self.phi(t) for t in thetas])

    def grad_batch(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        return np.array([self.grad(t) for t in thetas]).reshape(len(thetas), self.dim)

    def third_dir(self, theta, v1, v2, v3) -> float:
        """Third derivative of ``phi`` at ``theta`` along three directions.

        The default differentiates the Hessian by central differences.
        """
        theta = _vec(theta, self.dim)
        v1, v2, v3 = (_vec(v, self.dim) for v in (v1, v2, v3))
        n1 = np.linalg.norm(v1)
        if n1 == 0.0:
            return 0.0
        u = v1 / n1
        h = _FD_STEP * (1.0 + np.max(np.abs(theta)))
        dh = (self.hess(theta + h * u) - self.hess(theta - h * u)) / (2.0 * h)
        return float(n1 * (v2 @ dh @ v3))

    def fourth_dir(self, theta, v1, v2, v3, v4) -> float:
        """Fourth derivative of ``phi`` along four directions.

        The default takes a mixed second difference of the Hessian.
        """
        theta = _vec(theta, self.dim)
        v1, v2, v3, v4 = (_vec(v, self.dim) for v in (v1, v2, v3, v4))
        n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
        if n1 == 0.0 or n2 == 0.0:
            return 0.0
        a, b = v1 / n1, v2 / n2
        h = _FD_STEP * (1.0 + np.max(np.abs(theta)))
        d2 = (
            self.hess(theta + h * a + h * b)
            - self.hess(theta + h * a - h * b)
            - self.hess(theta - h * a + h * b)
            + self.hess(theta - h * a - h * b)
        ) / (4.0 * h * h)
        return float(n1 * n2 * (v3 @ d2 @ v4))

    def third_tensor(self, theta, basis) -> np.ndarray:
        """Full third-derivative tensor in the columns of ``basis``."""
        basis = np.asarray(basis, dtype=float)
        p = basis.shape[1]
        cols = [basis[:, i] for i in range(p)]
        t = np.empty((p, p, p))
        for i in range(p):
            for j in range(i, p):
                for k in range(j, p):
                    val = self.third_dir(theta, cols[i], cols[j], cols[k])
                    for a, b, c in _perms3(i, j, k):
                        t[a, b, c] = val
        return t

    def fourth_tensor(self, theta, basis) -> np.ndarray:
        """Full fourth-derivative tensor in the columns of ``basis``."""
        basis = np.asarray(basis, dtype=float)
        p = basis.shape[1]
        cols = [basis[:, i] for i in range(p)]
        t = np.empty((p, p, p, p))
        for i in range(p):
            for j in range(i, p):
                for k in range(j, p):
                    for m in range(k, p):
                        val = self.fourth_dir(theta, cols[i], cols[j], cols[k], cols[m])
                        for idx in _perms4(i, j, k, m):
                            t[idx] = val
        return t


def _perms3(i, j, k):
    return {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}


def _perms4(i, j, k, m):
    from itertools import permutations

    return set(permutations((i, j, k, m)))


# ---------------------------------------------------------------------------
# Logistic classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticDataset:
    """Binary classification data with a Gaussian prior.

    Attributes
    ----------
    X : ndarray of shape (n, p)
        Predictors.
    y : ndarray of shape (n,)
        Labels in {-1, +1}.
    prior_sd : float
        Standard deviation of the isotropic Gaussian prior.
    """

    X: np.ndarray
    y: np.ndarray
    prior_sd: float

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if not self.prior_sd > 0:
            raise ValueError("prior_sd must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "prior_sd", float(self.prior_sd))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LogisticDataset":
        return LogisticDataset(self.X[idx], self.y[idx], self.prior_sd)

    def to_csv(self, path) -> None:
        """Write the data with header ``y,x1,...,xp``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y"] + [f"x{j + 1}" for j in range(self.p)])
            for yi, xi in zip(self.y, self.X):
                w.writerow([int(yi)] + [repr(float(v)) for v in xi])

    @classmethod
    def from_csv(cls, path, prior_sd: float | None = None) -> "LogisticDataset":
        """Read data written by :meth:`to_csv`.

        The prior standard deviation defaults to ``1/sqrt(p)``.
        """
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "y":
            raise ValueError("dataset CSV must start with a 'y' column")
        p = len(header) - 1
        data = np.array([[float(v) for v in r] for r in body if r], dtype=float).reshape(-1, p + 1)
        sd = 1.0 / np.sqrt(p) if prior_sd is None else prior_sd
        return cls(data[:, 1:], data[:, 0], sd)


class LogisticTarget(TargetDensity):
    """Posterior of logistic regression under an isotropic Gaussian prior.

    ``phi(theta) = |theta|^2 / (2 s^2) + sum_i log(1 + exp(-y_i theta.x_i))``.
    """

    analytic_higher_derivs = True
    log_concave = True

    def __init__(self, data: LogisticDataset):
        self.data = data
        self.dim = data.p
        self._yx = data.X * data.y[:, None]
        self._prec = 1.0 / data.prior_sd**2

    def _margins(self, thetas):
        return thetas @ self._yx.T

    def phi(self, theta) -> float:
        theta = _vec(theta, self.dim)
        return float(self.phi_batch(theta[None, :])[0])

    def grad(self, theta) -> np.ndarray:
        theta = _vec(theta, self.dim)
        return self.grad_batch(theta[None, :])[0]

    def hess(self, theta) -> np.ndarray:
        theta = _vec(theta, self.dim)
        s = expit(self._yx @ theta)
        w = s * (1.0 - s)
        return (self.data.X * w[:, None]).T @ self.data.X + self._prec * np.eye(self.dim)

    def phi_batch(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        prior = 0.5 * self._prec * np.einsum("ij,ij->i", thetas, thetas)
        if self.data.n == 0:
            return prior
        return prior - log_expit(self._margins(thetas)).sum(axis=1)

    def grad_batch(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        g = self._prec * thetas
        if self.data.n == 0:
            return g
        # d/da log(1 + e^-a) = sigma(a) - 1 = -sigma(-a)
        return g - expit(-self._margins(thetas)) @ self._yx

    def _weights(self, theta):
        s = expit(self._yx @ _vec(theta, self.dim))
        w2 = s * (1.0 - s)
        w3 = w2 * (1.0 - 2.0 * s) * self.data.y
        w4 = w2 * (1.0 - 6.0 * s + 6.0 * s * s)
        return w3, w4

    def third_dir(self, theta, v1, v2, v3) -> float:
        w3, _ = self._weights(theta)
        X = self.data.X
        return float(np.sum(w3 * (X @ v1) * (X @ v2) * (X @ v3)))

    def fourth_dir(self, theta, v1, v2, v3, v4) -> float:
        _, w4 = self._weights(theta)
        X = self.data.X
        return float(np.sum(w4 * (X @ v1) * (X @ v2) * (X @ v3) * (X @ v4)))

    def third_tensor(self, theta, basis) -> np.ndarray:
        w3, _ = self._weights(theta)
        Z = self.data.X @ np.asarray(basis, dtype=float)
        return np.einsum("i,ij,ik,il->jkl", w3, Z, Z, Z, optimize=True)

    def fourth_tensor(self, theta, basis) -> np.ndarray:
        _, w4 = self._weights(theta)
        Z = self.data.X @ np.asarray(basis, dtype=float)
        p = Z.shape[1]
        K = (Z[:, :, None] * Z[:, None, :]).reshape(len(Z), p * p)
        return ((K * w4[:, None]).T @ K).reshape(p, p, p, p)


def logistic_target(data: LogisticDataset) -> LogisticTarget:
    """Build the logistic-regression posterior target for ``data``."""
    return LogisticTarget(data)


def generate_logistic_data(n: int, p: int, seed: int) -> LogisticDataset:
    """Synthetic logistic data with Gaussian predictors.

    Predictors are IID N(0, 1.5^2), labels follow the logistic model with
    true parameter ``(1/sqrt(p), ..., 1/sqrt(p))`` and the prior standard
    deviation is ``1/sqrt(p)``. Deterministic in ``(n, p, seed)``.
    """
    if n < 1 or p < 1:
        raise ValueError(f"n and p must be positive, got n={n}, p={p}")
    rng = RngStream(seed, 0).child(0xDA7A, n, p)
    X = 1.5 * rng.standard_normal((n, p))
    theta0 = np.full(p, 1.0 / np.sqrt(p))
    prob = expit(X @ theta0)
    y = np.where(rng.uniform(n) < prob, 1.0, -1.0)
    return LogisticDataset(X, y, 1.0 / np.sqrt(p))


# ---------------------------------------------------------------------------
# Gaussian and one-dimensional test models
# ---------------------------------------------------------------------------


class GaussianTarget(TargetDensity):
    """``phi(theta) = (theta - mu)' H (theta - mu) / 2``."""

    analytic_higher_derivs = True
    exactly_gaussian = True

    def __init__(self, mu, precision):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        H = np.atleast_2d(np.asarray(precision, dtype=float))
        if H.shape != (mu.size, mu.size):
            raise ValueError("precision must be a p x p matrix matching mu")
        if not np.allclose(H, H.T, rtol=1e-12, atol=1e-14):
            raise ValueError("precision must be symmetric")
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ValueError("precision must be positive definite") from None
        self.mu, self.precision, self.dim = mu, H, mu.size

    def phi(self, theta) -> float:
        d = _vec(theta, self.dim) - self.mu
        return float(0.5 * d @ self.precision @ d)

    def grad(self, theta) -> np.ndarray:
        return self.precision @ (_vec(theta, self.dim) - self.mu)

    def hess(self, theta) -> np.ndarray:
        return self.precision.copy()

    def phi_batch(self, thetas) -> np.ndarray:
        d = np.atleast_2d(np.asarray(thetas, dtype=float)) - self.mu
        return 0.5 * np.einsum("ij,jk,ik->i", d, self.precision, d)

    def grad_batch(self, thetas) -> np.ndarray:
        d = np.atleast_2d(np.asarray(thetas, dtype=float)) - self.mu
        return d @ self.precision

    def third_dir(self, theta, v1, v2, v3) -> float:
        return 0.0

    def fourth_dir(self, theta, v1, v2, v3, v4) -> float:
        return 0.0

    def third_tensor(self, theta, basis) -> np.ndarray:
        p = np.asarray(basis).shape[1]
        return np.zeros((p, p, p))

    def fourth_tensor(self, theta, basis) -> np.ndarray:
        p = np.asarray(basis).shape[1]
        return np.zeros((p, p, p, p))


def gaussian_target(mu, precision) -> GaussianTarget:
    """Gaussian target with mean ``mu`` and SPD precision matrix."""
    return GaussianTarget(mu, precision)


class QuarticTarget1D(TargetDensity):
    """``phi(theta) = theta^2 / 2 + eps * theta^4`` in one dimension."""

    analytic_higher_derivs = True
    dim = 1

    def __init__(self, eps: float):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)

    def phi(self, theta) -> float:
        t = _vec(theta, 1)[0]
        return 0.5 * t * t + self.eps * t**4

    def grad(self, theta) -> np.ndarray:
        t = _vec(theta, 1)[0]
        return np.array([t + 4.0 * self.eps * t**3])

    def hess(self, theta) -> np.ndarray:
        t = _vec(theta, 1)[0]
        return np.array([[1.0 + 12.0 * self.eps * t * t]])

    def phi_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))[:, 0]
        t2 = t * t
        return 0.5 * t2 + self.eps * t2 * t2

    def grad_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))[:, :1]
        return t + 4.0 * self.eps * t**3

    def third_dir(self, theta, v1, v2, v3) -> float:
        t = _vec(theta, 1)[0]
        return float(24.0 * self.eps * t * v1[0] * v2[0] * v3[0])

    def fourth_dir(self, theta, v1, v2, v3, v4) -> float:
        return float(24.0 * self.eps * v1[0] * v2[0] * v3[0] * v4[0])


def quartic_target_1d(eps: float) -> QuarticTarget1D:
    """One-dimensional quartic perturbation of the standard normal."""
    return QuarticTarget1D(eps)


class MixtureTarget1D(TargetDensity):
    """Equal mixture of N(0, 1) and N(0, sigma_wide^2); not log-concave.

    Evaluated in the log domain so that the far tails do not underflow.
    """

    log_concave = False
    dim = 1

    def __init__(self, sigma_wide: float):
        if not sigma_wide >= 1:
            raise ValueError("sigma_wide must be at least 1")
        self.sigma = float(sigma_wide)

    def _log_comps(self, t):
        s = self.sigma
        c = -0.5 * np.log(2.0 * np.pi) + np.log(0.5)
        return np.stack([c - 0.5 * t * t, c - np.log(s) - 0.5 * (t / s) ** 2])

    def _resp(self, t):
        lc = self._log_comps(t)
        return np.exp(lc - logsumexp(lc, axis=0))

    def phi_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))[:, 0]
        return -logsumexp(self._log_comps(t), axis=0)

    def grad_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))[:, 0]
        w = self._resp(t)
        prec = np.array([1.0, 1.0 / self.sigma**2])[:, None]
        return ((w * prec).sum(axis=0) * t)[:, None]

    def _hess_scalar(self, t):
        # phi'' = E_w[a] - Var_w[a t], with a the component precision
        w = self._resp(np.array([t]))[:, 0]
        a = np.array([1.0, 1.0 / self.sigma**2])
        m = w @ (a * t)
        return float(w @ a - (w @ (a * t) ** 2 - m * m))

    def phi(self, theta) -> float:
        return float(self.phi_batch(_vec(theta, 1)[None, :])[0])

    def grad(self, theta) -> np.ndarray:
        return self.grad_batch(_vec(theta, 1)[None, :])[0]

    def hess(self, theta) -> np.ndarray:
        return np.array([[self._hess_scalar(_vec(theta, 1)[0])]])


def mixture_target_1d(sigma_wide: float) -> MixtureTarget1D:
    """Thin-plus-wide Gaussian mixture used by the counterexample demo."""
    return MixtureTarget1D(sigma_wide)


class RadialQuarticTarget(TargetDensity):
    """``phi(theta) = |theta|^2 / 2 + eps |theta|^4``; radially symmetric."""

    analytic_higher_derivs = True

    def __init__(self, p: int, eps: float):
        if p < 1 or not eps > 0:
            raise ValueError("need p >= 1 and eps > 0")
        self.dim, self.eps = int(p), float(eps)

    def phi(self, theta) -> float:
        r2 = float(_vec(theta, self.dim) @ _vec(theta, self.dim))
        return 0.5 * r2 + self.eps * r2 * r2

    def grad(self, theta) -> np.ndarray:
        t = _vec(theta, self.dim)
        return t * (1.0 + 4.0 * self.eps * (t @ t))

    def hess(self, theta) -> np.ndarray:
        t = _vec(theta, self.dim)
        r2 = t @ t
        return (1.0 + 4.0 * self.eps * r2) * np.eye(self.dim) + 8.0 * self.eps * np.outer(t, t)

    def phi_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        r2 = np.einsum("ij,ij->i", t, t)
        return 0.5 * r2 + self.eps * r2 * r2

    def grad_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        r2 = np.einsum("ij,ij->i", t, t)
        return t * (1.0 + 4.0 * self.eps * r2)[:, None]

    def third_dir(self, theta, v1, v2, v3) -> float:
        t = _vec(theta, self.dim)
        return float(8.0 * self.eps * ((t @ v1) * (v2 @ v3) + (t @ v2) * (v1 @ v3) + (t @ v3) * (v1 @ v2)))

    def fourth_dir(self, theta, v1, v2, v3, v4) -> float:
        return float(8.0 * self.eps * ((v1 @ v2) * (v3 @ v4) + (v1 @ v3) * (v2 @ v4) + (v1 @ v4) * (v2 @ v3)))


def radial_quartic_target(p: int, eps: float) -> RadialQuarticTarget:
    """Radially symmetric quartic perturbation of the standard normal."""
    return RadialQuarticTarget(p, eps)


class AffineTarget(TargetDensity):
    """``theta -> base.phi(A theta + b) + const``.

    Used to check reparameterization and constant-shift invariances.
    """

    def __init__(self, base: TargetDensity, A=None, b=None, const: float = 0.0):
        p = base.dim
        self.base, self.dim = base, p
        self.A = np.eye(p) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(p) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        self.const = float(const)
        self.analytic_higher_derivs = base.analytic_higher_derivs
        self.log_concave = base.log_concave
        self.exactly_gaussian = base.exactly_gaussian and abs(np.linalg.det(self.A)) > 0

    def _map(self, theta):
        return self.A @ _vec(theta, self.dim) + self.b

    def phi(self, theta) -> float:
        return self.base.phi(self._map(theta)) + self.const

    def grad(self, theta) -> np.ndarray:
        return self.A.T @ self.base.grad(self._map(theta))

    def hess(self, theta) -> np.ndarray:
        return self.A.T @ self.base.hess(self._map(theta)) @ self.A

    def phi_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        return self.base.phi_batch(t @ self.A.T + self.b) + self.const

    def grad_batch(self, thetas) -> np.ndarray:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        return self.base.grad_batch(t @ self.A.T + self.b) @ self.A

    def third_dir(self, theta, v1, v2, v3) -> float:
        A = self.A
        return self.base.third_dir(self._map(theta), A @ v1, A @ v2, A @ v3)

    def fourth_dir(self, theta, v1, v2, v3, v4) -> float:
        A = self.A
        return self.base.fourth_dir(self._map(theta), A @ v1, A @ v2, A @ v3, A @ v4)
