"""Gaussian-process surrogate with ARD kernel and acquisition functions.

The surrogate models a scalar objective over the unit box.  Inputs are
expected in [0,1]^d (callers map from physical coordinates); targets are
standardized internally.  The kernel is squared-exponential with one
lengthscale per dimension plus a learned noise floor; hyperparameters are
fit by maximizing the log marginal likelihood with a few Nelder-Mead
restarts, which is cheap at the training sizes this package runs at.

Acquisition functions follow the minimization convention: lower LCB is
better, larger EI and PI are better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

_JITTER = 1e-10
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


def normal_pdf(z: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


class GPError(RuntimeError):
    """Raised when the surrogate cannot be fit."""


def _kernel(theta: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ARD squared-exponential. theta = [log ls_1..d, log sf2, log sn2]."""
    d = a.shape[1]
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    sq = np.zeros((a.shape[0], b.shape[0]))
    for k in range(d):
        diff = (a[:, k : k + 1] - b[None, :, k]) / ls[k]
        sq += diff * diff
    return sf2 * np.exp(-0.5 * sq)


def _chol_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    jitter = _JITTER
    for _ in range(10):
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(len(mat))), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GPError("covariance stayed indefinite up to the jitter cap")


@dataclass
class SurrogateGP:
    """Exact GP regression on standardized targets.

    ``fixed_noise`` pins the noise variance (in standardized units)
    instead of learning it; pass 0.0 to interpolate up to the jitter.
    """

    restarts: int = 3
    seed: int = 0
    fixed_noise: float | None = None

    x_train: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    theta: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _chol: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _alpha: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _y_mean: float = 0.0
    _y_std: float = 1.0

    def _noise(self, theta: np.ndarray, d: int) -> float:
        if self.fixed_noise is not None:
            return self.fixed_noise
        return math.exp(theta[d + 1])

    def _neg_lml(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        d = x.shape[1]
        if np.any(theta[:d] < -7.0) or np.any(theta > 7.0):
            return 1e12
        cov = _kernel(theta, x, x)
        cov[np.diag_indices_from(cov)] += self._noise(theta, d) + _JITTER
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            return 1e12
        alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
        return float(
            0.5 * y @ alpha
            + np.sum(np.log(np.diag(chol)))
            + 0.5 * len(y) * math.log(2.0 * math.pi)
        )

    def fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        theta0: np.ndarray | None = None,
        optimize_hypers: bool = True,
    ) -> "SurrogateGP":
        """Condition on (x, y); optionally reuse hyperparameters.

        Passing ``theta0`` with ``optimize_hypers=False`` skips the
        marginal-likelihood search entirely, which keeps incremental
        refits cheap between full refit steps.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 2 or len(x) != len(y) or len(x) == 0:
            raise GPError("training data must be a nonempty (n,d) box sample")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise GPError("training data must be finite")
        self._y_mean = float(np.mean(y))
        self._y_std = float(np.std(y)) or 1.0
        z = (y - self._y_mean) / self._y_std

        d = x.shape[1]
        if theta0 is not None and not optimize_hypers:
            best_theta = np.asarray(theta0, dtype=float)
            if len(best_theta) != d + 2:
                raise GPError("theta0 has the wrong length for this input dim")
        else:
            rng = np.random.default_rng(self.seed)
            starts = [np.concatenate([np.zeros(d), [0.0, math.log(1e-4)]])]
            if theta0 is not None:
                starts.insert(0, np.asarray(theta0, dtype=float))
            for _ in range(max(0, self.restarts - 1)):
                starts.append(
                    np.concatenate(
                        [
                            rng.uniform(-2.0, 1.0, size=d),
                            [rng.uniform(-1.0, 1.0), rng.uniform(-12.0, -4.0)],
                        ]
                    )
                )
            best_theta, best_val = None, math.inf
            for start in starts:
                res = minimize(
                    self._neg_lml,
                    start,
                    args=(x, z),
                    method="Nelder-Mead",
                    options={
                        "maxiter": min(200 * (d + 2), 600),
                        "xatol": 1e-3,
                        "fatol": 1e-5,
                    },
                )
                if res.fun < best_val:
                    best_theta, best_val = res.x, float(res.fun)
            if best_theta is None:
                raise GPError("hyperparameter search failed from every start")

        cov = _kernel(best_theta, x, x)
        cov[np.diag_indices_from(cov)] += self._noise(best_theta, d)
        chol, _ = _chol_with_jitter(cov)
        self.x_train = x
        self.theta = best_theta
        self._chol = chol
        self._alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, z))
        return self

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in original target units."""
        if self.x_train is None:
            raise GPError("predict before fit")
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        d = self.x_train.shape[1]
        cross = _kernel(self.theta, xs, self.x_train)
        mean = cross @ self._alpha
        v = np.linalg.solve(self._chol, cross.T)
        prior = math.exp(self.theta[d])
        var = np.maximum(prior - np.sum(v * v, axis=0), 0.0)
        return (
            mean * self._y_std + self._y_mean,
            np.sqrt(var) * self._y_std,
        )


def kappa_schedule(step: int, dim: int, delta: float = 0.05) -> float:
    """Confidence width for LCB that grows slowly with the step count."""
    if step < 1:
        raise ValueError("step counts from 1")
    arg = dim * step * step * math.pi * math.pi / (6.0 * delta)
    return math.sqrt(2.0 * math.log(arg))


def lower_confidence_bound(mu: float, sigma: float, kappa: float) -> float:
    return mu - kappa * sigma


def expected_improvement(mu: float, sigma: float, best: float) -> float:
    """E[max(best - Y, 0)] for Y ~ N(mu, sigma^2)."""
    if sigma <= 0.0:
        return max(best - mu, 0.0)
    z = (best - mu) / sigma
    return (best - mu) * normal_cdf(z) + sigma * normal_pdf(z)


def probability_of_improvement(mu: float, sigma: float, best: float) -> float:
    """P(Y < best) for Y ~ N(mu, sigma^2)."""
    if sigma <= 0.0:
        return 1.0 if mu < best else 0.0
    return normal_cdf((best - mu) / sigma)
