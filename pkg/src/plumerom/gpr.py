"""Exact Gaussian-process regression with an anisotropic Matern-5/2 kernel.

One GP per reduced coefficient: zero prior mean, observation noise s^2,
signal variance rho, and one length-scale per input dimension (ARD). The
marginal log-likelihood and the log-posterior (likelihood plus Gamma /
Gaussian hyperparameter priors) are differentiated analytically; both are
maximized in log-space by a quasi-Newton line search (L-BFGS-B), either from
many random starts (MLL) or from the prior modes in a single descent (MAP).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sp_optimize
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.special import gammaln

from .errors import ConfigError, NumericalError

SQRT5 = math.sqrt(5.0)
JITTER = 1e-8
N_HYPERS = 6  # noise, signal, 4 length-scales

# Optimization box in natural space (log-space inside the optimizer). The
# signal-variance cap of 2 matches the whitened-coefficient setting, where
# ensemble variance hovers around one.
DEFAULT_BOUNDS = {
    "noise_var": (1e-8, 1.0),
    "signal_var": (1e-2, 2.0),
    "lengthscale": (1e-3, 1e3),
}
# Random-restart sampling box for MLL (log-uniform draws).
RESTART_BOX = {
    "noise_var": (1e-6, 1.0),
    "signal_var": (0.1, 2.0),
    "lengthscale": (1e-2, 1e1),
}


@dataclass(frozen=True)
class Hyperparameters:
    """Noise variance, signal variance, and per-dimension length-scales."""

    noise_var: float
    signal_var: float
    lengthscales: tuple[float, float, float, float]

    def __post_init__(self):
        if self.noise_var < 0.0:
            raise ConfigError("noise_var must be >= 0")
        if self.signal_var <= 0.0 or any(l <= 0.0 for l in self.lengthscales):
            raise ConfigError("signal_var and lengthscales must be > 0")

    def to_log_vector(self) -> np.ndarray:
        if self.noise_var <= 0.0:
            raise ConfigError("log-space vector requires noise_var > 0")
        return np.log([self.noise_var, self.signal_var, *self.lengthscales])

    @classmethod
    def from_log_vector(cls, v) -> "Hyperparameters":
        v = np.exp(np.asarray(v, dtype=float))
        return cls(noise_var=v[0], signal_var=v[1], lengthscales=tuple(v[2:6]))

    def to_dict(self) -> dict:
        return {
            "noise_var": self.noise_var,
            "signal_var": self.signal_var,
            "lengthscales": list(self.lengthscales),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        return cls(d["noise_var"], d["signal_var"], tuple(d["lengthscales"]))


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior; shape > 1 so the mode exists and is positive."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 1.0 or self.rate <= 0.0:
            raise ConfigError(f"Gamma prior needs shape > 1 and rate > 0, got "
                              f"shape={self.shape}, rate={self.rate}")

    @property
    def mode(self) -> float:
        return (self.shape - 1.0) / self.rate

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2

    def logpdf(self, x: float) -> float:
        return (
            self.shape * math.log(self.rate)
            - gammaln(self.shape)
            + (self.shape - 1.0) * math.log(x)
            - self.rate * x
        )

    def dlogpdf_dlog(self, x: float) -> float:
        """d logpdf / d log(x), i.e. x * d logpdf / dx."""
        return (self.shape - 1.0) - self.rate * x

    def to_dict(self) -> dict:
        return {"shape": self.shape, "rate": self.rate, "mode": self.mode,
                "mean": self.mean, "variance": self.variance}


@dataclass(frozen=True)
class GaussianPrior:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance <= 0.0:
            raise ConfigError("Gaussian prior variance must be > 0")

    def logpdf(self, x: float) -> float:
        return -0.5 * (x - self.mean) ** 2 / self.variance - 0.5 * math.log(
            2.0 * math.pi * self.variance
        )

    def dlogpdf_dlog(self, x: float) -> float:
        return -(x - self.mean) / self.variance * x

    def to_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance}


@dataclass(frozen=True)
class PriorSet:
    """Hyperparameter priors; any component set to None is flat (improper).

    ``PriorSet.flat()`` contributes nothing, so the log-posterior degenerates
    to the marginal log-likelihood.
    """

    noise: GammaPrior | None
    signal: GaussianPrior | None
    lengthscales: tuple[GammaPrior, GammaPrior, GammaPrior, GammaPrior] | None

    @classmethod
    def flat(cls) -> "PriorSet":
        return cls(noise=None, signal=None, lengthscales=None)

    def start_point(self) -> Hyperparameters:
        """Gradient-descent start: Gamma components at their mode, the signal
        variance at its Gaussian mean."""
        if self.noise is None or self.signal is None or self.lengthscales is None:
            raise ConfigError("flat priors define no start point")
        return Hyperparameters(
            noise_var=self.noise.mode,
            signal_var=self.signal.mean,
            lengthscales=tuple(g.mode for g in self.lengthscales),
        )

    def log_density_and_grad(self, theta: Hyperparameters) -> tuple[float, np.ndarray]:
        """Log prior density at theta and its gradient w.r.t. log-theta."""
        value = 0.0
        grad = np.zeros(N_HYPERS)
        if self.noise is not None:
            value += self.noise.logpdf(theta.noise_var)
            grad[0] = self.noise.dlogpdf_dlog(theta.noise_var)
        if self.signal is not None:
            value += self.signal.logpdf(theta.signal_var)
            grad[1] = self.signal.dlogpdf_dlog(theta.signal_var)
        if self.lengthscales is not None:
            for i, g in enumerate(self.lengthscales):
                value += g.logpdf(theta.lengthscales[i])
                grad[2 + i] = g.dlogpdf_dlog(theta.lengthscales[i])
        return value, grad

    def to_dict(self) -> dict:
        return {
            "noise": None if self.noise is None else self.noise.to_dict(),
            "signal": None if self.signal is None else self.signal.to_dict(),
            "lengthscales": None
            if self.lengthscales is None
            else [g.to_dict() for g in self.lengthscales],
        }


def ard_distance(a, b, lengthscales) -> float:
    """Anisotropic distance sqrt(sum_i ((a_i-b_i)/lambda_i)^2)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lengthscales = np.asarray(lengthscales, dtype=float)
    if np.any(lengthscales <= 0.0):
        raise ConfigError("lengthscales must be positive")
    return float(np.sqrt(np.sum(((a - b) / lengthscales) ** 2)))


def matern52(d, signal_var: float = 1.0):
    """Matern covariance at smoothness 5/2, length-scale absorbed into d."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0):
        raise ConfigError("distance must be >= 0")
    out = signal_var * (1.0 + SQRT5 * d + (5.0 / 3.0) * d**2) * np.exp(-SQRT5 * d)
    return float(out) if out.ndim == 0 else out


def _sq_diffs(x1: np.ndarray, x2: np.ndarray | None = None) -> np.ndarray:
    """Per-dimension squared differences, shape (dim, n1, n2)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = x1 if x2 is None else np.asarray(x2, dtype=float)
    return (x1.T[:, :, None] - x2.T[:, None, :]) ** 2


def _kernel_from_sq_diffs(sqd: np.ndarray, theta: Hyperparameters) -> np.ndarray:
    ls = np.asarray(theta.lengthscales)
    d = np.sqrt(np.tensordot(1.0 / ls**2, sqd, axes=1))
    return matern52(d, theta.signal_var)


def kernel_matrix(x1, x2, theta: Hyperparameters) -> np.ndarray:
    """Dense cross-covariance r(x1, x2) without noise."""
    return _kernel_from_sq_diffs(_sq_diffs(x1, x2), theta)


def _factorize(kernel: np.ndarray, noise_var: float):
    """Cholesky of kernel + noise_var*I with the single-jitter fallback."""
    k = kernel.copy()
    idx = np.diag_indices_from(k)
    k[idx] += noise_var
    try:
        return cho_factor(k, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    k[idx] += JITTER
    try:
        return cho_factor(k, lower=True), JITTER
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"kernel matrix not positive definite even with jitter {JITTER:g}"
        ) from exc


@dataclass
class GpModel:
    """A fitted GP: training data, hyperparameters, and factorized covariance."""

    inputs: np.ndarray
    targets: np.ndarray
    theta: Hyperparameters
    chol: tuple
    alpha: np.ndarray
    jitter: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return self.inputs.shape[0]


def fit_gp(inputs, targets, theta: Hyperparameters, diagnostics: dict | None = None) -> GpModel:
    """Factorize the training covariance and precompute alpha."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] != targets.shape[0]:
        raise ConfigError("inputs must be (n, dim) matching targets (n,)")
    kernel = kernel_matrix(inputs, inputs, theta)
    chol, jitter = _factorize(kernel, theta.noise_var)
    alpha = cho_solve(chol, targets)
    return GpModel(
        inputs=inputs,
        targets=targets,
        theta=theta,
        chol=chol,
        alpha=alpha,
        jitter=jitter,
        diagnostics=diagnostics or {},
    )


def posterior(model: GpModel, test_inputs) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and full covariance at the test inputs."""
    test_inputs = np.atleast_2d(np.asarray(test_inputs, dtype=float))
    k_cross = kernel_matrix(model.inputs, test_inputs, model.theta)
    mean = k_cross.T @ model.alpha
    v = solve_triangular(model.chol[0], k_cross, lower=True)
    cov = kernel_matrix(test_inputs, test_inputs, model.theta) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    diag = np.diagonal(cov)
    if diag.min() < -1e-8:
        raise NumericalError(f"posterior variance {diag.min():.3e} below tolerance")
    idx = np.diag_indices_from(cov)
    cov[idx] = np.maximum(diag, 0.0)
    return mean, cov


def posterior_mean_var(model: GpModel, test_inputs) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and marginal variance only (cheaper than full cov)."""
    test_inputs = np.atleast_2d(np.asarray(test_inputs, dtype=float))
    k_cross = kernel_matrix(model.inputs, test_inputs, model.theta)
    mean = k_cross.T @ model.alpha
    v = solve_triangular(model.chol[0], k_cross, lower=True)
    var = model.theta.signal_var - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


class MllProblem:
    """Marginal log-likelihood (and log-posterior) of one target vector.

    Precomputes pairwise squared differences once; they can be shared across
    problems on the same inputs via ``sq_diffs``.
    """

    def __init__(self, inputs, targets, sq_diffs: np.ndarray | None = None):
        self.inputs = np.asarray(inputs, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        self.n = self.inputs.shape[0]
        self.sqd = _sq_diffs(self.inputs) if sq_diffs is None else sq_diffs
        self.sqd_flat = self.sqd.reshape(4, -1)
        self.jitter_events = 0
        self._upper = np.triu_indices(self.n, 1)

    def mll_and_grad(self, theta: Hyperparameters) -> tuple[float, np.ndarray]:
        """MLL value and gradient w.r.t. log(theta), both analytic."""
        inv_ls2 = 1.0 / np.asarray(theta.lengthscales) ** 2
        d = np.sqrt(np.tensordot(inv_ls2, self.sqd, axes=1))
        decay = np.exp(-SQRT5 * d)
        kernel = theta.signal_var * (1.0 + SQRT5 * d + (5.0 / 3.0) * d**2) * decay
        chol, jitter = _factorize(kernel, theta.noise_var)
        if jitter:
            self.jitter_events += 1
        alpha = cho_solve(chol, self.targets, check_finite=False)
        value = (
            -0.5 * float(self.targets @ alpha)
            - float(np.log(np.diagonal(chol[0])).sum())
            - 0.5 * self.n * math.log(2.0 * math.pi)
        )
        # grad_j = 0.5 * sum((alpha alpha^T - K^-1) * dK/dphi_j)
        raw, info = dpotri(chol[0], lower=True)
        if info != 0:
            raise NumericalError(f"dpotri failed with info={info}")
        raw[self._upper] = raw.T[self._upper]  # dpotri fills one triangle only
        a_mat = np.outer(alpha, alpha)
        a_mat -= raw
        grad = np.empty(N_HYPERS)
        grad[0] = 0.5 * theta.noise_var * np.trace(a_mat)
        grad[1] = 0.5 * float(np.einsum("ij,ij->", a_mat, kernel))
        # dK/dlog(lambda_i) = rho*(5/3)*(1+sqrt5 d)*decay * sqd_i / lambda_i^2
        base = a_mat
        base *= decay
        base *= 1.0 + SQRT5 * d
        weights = self.sqd_flat @ base.ravel()
        grad[2:] = 0.5 * theta.signal_var * (5.0 / 3.0) * weights * inv_ls2
        return value, grad

    def log_posterior_and_grad(
        self, theta: Hyperparameters, priors: PriorSet
    ) -> tuple[float, np.ndarray]:
        value, grad = self.mll_and_grad(theta)
        p_value, p_grad = priors.log_density_and_grad(theta)
        return value + p_value, grad + p_grad


def log_marginal_likelihood(inputs, targets, theta: Hyperparameters):
    """Convenience wrapper: (value, gradient over log-theta)."""
    return MllProblem(inputs, targets).mll_and_grad(theta)


def log_posterior(inputs, targets, theta: Hyperparameters, priors: PriorSet):
    """MLL plus log prior densities; gradient in log-space."""
    return MllProblem(inputs, targets).log_posterior_and_grad(theta, priors)


def _log_bounds() -> list[tuple[float, float]]:
    b = DEFAULT_BOUNDS
    out = [
        (math.log(b["noise_var"][0]), math.log(b["noise_var"][1])),
        (math.log(b["signal_var"][0]), math.log(b["signal_var"][1])),
    ]
    out += [(math.log(b["lengthscale"][0]), math.log(b["lengthscale"][1]))] * 4
    return out


def _descend(objective, start: Hyperparameters, gtol: float, maxiter: int):
    """One quasi-Newton trajectory maximizing ``objective`` in log-space."""
    def negated(log_theta):
        theta = Hyperparameters.from_log_vector(log_theta)
        try:
            value, grad = objective(theta)
        except NumericalError:
            return 1e30, np.zeros(N_HYPERS)
        return -value, -grad

    result = sp_optimize.minimize(
        negated,
        start.to_log_vector(),
        jac=True,
        method="L-BFGS-B",
        bounds=_log_bounds(),
        options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-14},
    )
    theta = Hyperparameters.from_log_vector(result.x)
    return theta, -float(result.fun), int(result.nit), bool(result.success)


def _sample_start(rng: np.random.Generator) -> Hyperparameters:
    def log_uniform(lo, hi):
        return math.exp(rng.uniform(math.log(lo), math.log(hi)))

    return Hyperparameters(
        noise_var=log_uniform(*RESTART_BOX["noise_var"]),
        signal_var=log_uniform(*RESTART_BOX["signal_var"]),
        lengthscales=tuple(
            log_uniform(*RESTART_BOX["lengthscale"]) for _ in range(4)
        ),
    )


def optimize_mll(
    inputs,
    targets,
    n_restarts: int = 15,
    seed: int = 0,
    *,
    sq_diffs: np.ndarray | None = None,
    gtol: float = 1e-6,
    maxiter: int = 500,
) -> tuple[Hyperparameters, dict]:
    """Maximize the MLL from ``n_restarts`` random log-uniform starts."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[0] < 4:
        raise ConfigError("MLL optimization needs at least 4 training points")
    problem = MllProblem(inputs, targets, sq_diffs=sq_diffs)
    rng = np.random.Generator(np.random.Philox(seed))
    trajectories = []
    best = None
    t0 = time.perf_counter()
    for _ in range(n_restarts):
        start = _sample_start(rng)
        try:
            theta, value, nit, ok = _descend(problem.mll_and_grad, start, gtol, maxiter)
        except NumericalError:
            trajectories.append({"value": None, "iterations": 0, "converged": False})
            continue
        trajectories.append({"value": value, "iterations": nit, "converged": ok,
                             "theta": theta.to_dict()})
        if best is None or value > best[1]:
            best = (theta, value)
    if best is None:
        raise NumericalError("every MLL restart failed to factorize")
    diagnostics = {
        "method": "mll",
        "n_restarts": n_restarts,
        "trajectories": trajectories,
        "total_iterations": sum(t["iterations"] for t in trajectories),
        "best_value": best[1],
        "jitter_events": problem.jitter_events,
        "wall_time": time.perf_counter() - t0,
    }
    return best[0], diagnostics


def optimize_map(
    inputs,
    targets,
    priors: PriorSet,
    start: Hyperparameters | None = None,
    *,
    sq_diffs: np.ndarray | None = None,
    gtol: float = 1e-6,
    maxiter: int = 500,
) -> tuple[Hyperparameters, dict]:
    """Maximize the log-posterior in a single descent from the prior modes."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[0] < 4:
        raise ConfigError("MAP optimization needs at least 4 training points")
    problem = MllProblem(inputs, targets, sq_diffs=sq_diffs)
    start = start or priors.start_point()
    t0 = time.perf_counter()
    theta, value, nit, ok = _descend(
        lambda th: problem.log_posterior_and_grad(th, priors), start, gtol, maxiter
    )
    diagnostics = {
        "method": "map",
        "start": start.to_dict(),
        "total_iterations": nit,
        "best_value": value,
        "converged": ok,
        "jitter_events": problem.jitter_events,
        "wall_time": time.perf_counter() - t0,
    }
    return theta, diagnostics
