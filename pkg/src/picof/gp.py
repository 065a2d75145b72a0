"""Exact Gaussian-process regression, one model per scalar output channel.

Inputs are scaled to the unit box by fixed bounds and outputs are
standardized by the training mean/std, so hyperparameters live on
normalized scales. The kernel is squared-exponential with ARD lengthscales.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

JITTER_START = 1e-10
JITTER_MAX = 1e-6

__all__ = [
    "Dataset",
    "GpHyperparams",
    "HyperBounds",
    "GpModel",
    "SurrogateBundle",
    "IllConditionedKernelError",
    "fit",
    "predict",
    "log_marginal_likelihood",
    "optimize_hyperparams",
    "bundle_predict",
]


class IllConditionedKernelError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized even with jitter."""


@dataclass(frozen=True)
class Dataset:
    """Training data for a single output channel.

    ``x`` is stored on physical scale; ``lower``/``upper`` define the box used
    to map inputs onto ``[0, 1]``.
    """

    x: np.ndarray
    y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    name: str = "y"

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] == 1 and np.ndim(self.x) == 1 and np.size(self.lower) == 1:
            x = x.reshape(-1, 1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"channel {self.name!r}: {x.shape[0]} input rows but {y.shape[0]} outputs"
            )
        if x.shape[1] != lower.shape[0] or lower.shape != upper.shape:
            raise ValueError(f"channel {self.name!r}: bounds do not match input dimension")
        if np.any(upper <= lower):
            raise ValueError(f"channel {self.name!r}: degenerate input bounds")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        mean = float(np.mean(y)) if y.shape[0] else 0.0
        scale = 1.0
        if y.shape[0] >= 2:
            sd = float(np.std(y))
            scale = sd if sd > 1e-12 * max(1.0, abs(mean)) else 1.0
        object.__setattr__(self, "_stats", (mean, scale))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def y_mean(self) -> float:
        return self._stats[0]

    @property
    def y_scale(self) -> float:
        """Training std of the outputs (1 when undefined or degenerate)."""
        return self._stats[1]

    def normalize_x(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def denormalize_x(self, u):
        return np.asarray(u, dtype=float) * (self.upper - self.lower) + self.lower

    def normalize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def denormalize_y(self, v):
        return np.asarray(v, dtype=float) * self.y_scale + self.y_mean

    def append(self, x, y) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        y = np.asarray(y, dtype=float).reshape(-1)
        return replace(self, x=np.vstack([self.x, x]), y=np.concatenate([self.y, y]))


@dataclass(frozen=True)
class GpHyperparams:
    signal_variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.array([0.5]))
    noise_variance: float = 1e-6

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).reshape(-1)
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_variance > 0 or np.any(ls <= 0):
            raise ValueError("signal variance and lengthscales must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")

    @classmethod
    def default(cls, dim: int, noise_variance: float = 1e-6) -> "GpHyperparams":
        return cls(1.0, np.full(dim, 0.5), noise_variance)

    def to_log(self) -> np.ndarray:
        """Log-space vector ``[log sf2, log l_1..l_d]`` (noise excluded)."""
        return np.concatenate([[np.log(self.signal_variance)], np.log(self.lengthscales)])

    def with_log(self, theta) -> "GpHyperparams":
        theta = np.asarray(theta, dtype=float)
        return GpHyperparams(float(np.exp(theta[0])), np.exp(theta[1:]), self.noise_variance)

    def as_dict(self) -> dict:
        return {
            "signal_variance": float(self.signal_variance),
            "lengthscales": [float(v) for v in self.lengthscales],
            "noise_variance": float(self.noise_variance),
        }


@dataclass(frozen=True)
class HyperBounds:
    """Box on normalized-scale hyperparameters used during optimization."""

    signal_variance: tuple[float, float] = (1e-2, 1e2)
    lengthscale: tuple[float, float] = (5e-2, 5.0)

    def log_bounds(self, dim: int) -> list[tuple[float, float]]:
        sv = tuple(np.log(self.signal_variance))
        ls = tuple(np.log(self.lengthscale))
        return [sv] + [ls] * dim


def _sq_dist(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = a / lengthscales
    b = b / lengthscales
    d2 = (a**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def _kernel(a, b, hp: GpHyperparams) -> np.ndarray:
    return hp.signal_variance * np.exp(-0.5 * _sq_dist(a, b, hp.lengthscales))


@dataclass(frozen=True)
class GpModel:
    hyperparams: GpHyperparams
    data: Dataset
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    u_train: np.ndarray

    @property
    def name(self) -> str:
        return self.data.name

    @property
    def dim(self) -> int:
        return self.data.dim


def _factorize(u: np.ndarray, hp: GpHyperparams, name: str):
    K = _kernel(u, u, hp)
    n = K.shape[0]
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        A = K + (hp.noise_variance + jitter) * np.eye(n)
        try:
            L = cholesky(A, lower=True, check_finite=True)
            return K, L, jitter
        except (LinAlgError, ValueError):
            jitter *= 10.0
    raise IllConditionedKernelError(f"ill-conditioned kernel for channel {name!r}")


def fit(dataset: Dataset, hp: GpHyperparams) -> GpModel:
    """Factorize the kernel matrix and cache the weight vector."""
    if dataset.n < 1:
        raise ValueError(f"channel {dataset.name!r}: need at least one observation")
    if hp.lengthscales.shape[0] != dataset.dim:
        raise ValueError(f"channel {dataset.name!r}: lengthscale count != input dimension")
    u = dataset.normalize_x(dataset.x)
    v = dataset.normalize_y(dataset.y)
    _, L, jitter = _factorize(u, hp, dataset.name)
    alpha = cho_solve((L, True), v)
    return GpModel(hp, dataset, L, alpha, jitter, u)


def _as_points(model: GpModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == model.dim else x.reshape(-1, 1)
        single = x.shape[0] == 1
    if x.shape[1] != model.dim:
        raise ValueError(
            f"input has dimension {x.shape[1]}, model {model.name!r} expects {model.dim}"
        )
    return x, single


def predict(model: GpModel, x):
    """Posterior mean and standard deviation of the latent function.

    Accepts a single point (scalar or length-d vector) or an ``(N, d)``
    array. Returns scalars for a single point, otherwise length-N arrays.
    Both are on the physical output scale.
    """
    pts, single = _as_points(model, x)
    u = model.data.normalize_x(pts)
    Ks = _kernel(u, model.u_train, model.hyperparams)
    mean_n = Ks @ model.alpha
    w = solve_triangular(model.chol, Ks.T, lower=True)
    var_n = np.maximum(model.hyperparams.signal_variance - (w**2).sum(0), 0.0)
    mean = model.data.denormalize_y(mean_n)
    std = np.sqrt(var_n) * model.data.y_scale
    if single:
        return float(mean[0]), float(std[0])
    return mean, std


def log_marginal_likelihood(model: GpModel, with_noise_grad: bool = False):
    """Log marginal likelihood of the normalized outputs and its gradient.

    The gradient is taken with respect to ``[log sf2, log l_1..l_d]``, with
    ``log noise`` appended when ``with_noise_grad`` is set.
    """
    hp = model.hyperparams
    u = model.u_train
    v = model.data.normalize_y(model.data.y)
    n = v.shape[0]
    L, alpha = model.chol, model.alpha
    lml = -0.5 * v @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)

    K = _kernel(u, u, hp)
    Kinv = cho_solve((L, True), np.eye(n))
    inner = np.outer(alpha, alpha) - Kinv
    grads = [0.5 * np.sum(inner * K)]
    for k, ell in enumerate(hp.lengthscales):
        diff2 = (u[:, k, None] - u[None, :, k]) ** 2 / ell**2
        grads.append(0.5 * np.sum(inner * K * diff2))
    if with_noise_grad:
        grads.append(0.5 * hp.noise_variance * np.trace(inner))
    return float(lml), np.asarray(grads)


def _neg_lml(theta, dataset: Dataset, base: GpHyperparams):
    try:
        model = fit(dataset, base.with_log(theta))
    except IllConditionedKernelError:
        return 1e25, np.zeros_like(theta)
    lml, grad = log_marginal_likelihood(model)
    return -lml, -grad


def optimize_hyperparams(
    dataset: Dataset,
    restarts: int = 3,
    seed: int = 0,
    noise_variance: float = 1e-6,
    bounds: HyperBounds | None = None,
    initial: GpHyperparams | None = None,
) -> GpHyperparams:
    """Maximize the marginal likelihood with seeded multi-start L-BFGS-B.

    The first start is ``initial`` (or the default hyperparameters); the
    remaining ``restarts`` are drawn log-uniformly inside ``bounds``. Noise
    is held fixed.
    """
    if dataset.n < 2:
        raise ValueError(f"channel {dataset.name!r}: need at least two observations")
    bounds = bounds or HyperBounds()
    box = bounds.log_bounds(dataset.dim)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    base = initial or GpHyperparams.default(dataset.dim, noise_variance)
    base = replace(base, noise_variance=noise_variance)
    rng = np.random.default_rng(seed)
    starts = [np.clip(base.to_log(), lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(restarts)]

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        res = minimize(
            _neg_lml, theta0, args=(dataset, base), jac=True, method="L-BFGS-B", bounds=box
        )
        if np.isfinite(res.fun) and res.fun < best_val and res.fun < 1e24:
            best_theta, best_val = res.x, res.fun
    if best_theta is None:
        raise IllConditionedKernelError(
            f"all hyperparameter restarts failed for channel {dataset.name!r}"
        )
    return base.with_log(best_theta)


@dataclass(frozen=True)
class SurrogateBundle:
    """Independent GPs, one per output channel, addressed in a fixed order.

    ``input_map`` optionally selects which columns of the decision vector feed
    each channel; ``None`` means every channel sees the full vector.
    """

    models: tuple[GpModel, ...]
    input_map: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        dims = {mdl.dim for mdl in self.models}
        if len(dims) != 1:
            raise ValueError("all channel models must share the same input dimension")
        if self.input_map is not None:
            (dim,) = dims
            imap = tuple(tuple(int(i) for i in cols) for cols in self.input_map)
            if len(imap) != len(self.models) or any(len(cols) != dim for cols in imap):
                raise ValueError("input_map needs one column tuple of model dimension per channel")
            object.__setattr__(self, "input_map", imap)
        object.__setattr__(self, "_scales", np.array([mdl.data.y_scale for mdl in self.models]))

    @property
    def names(self) -> list[str]:
        return [mdl.name for mdl in self.models]

    @property
    def m(self) -> int:
        return len(self.models)

    @property
    def scales(self) -> np.ndarray:
        return self._scales

    def channel_inputs(self, j: int, x: np.ndarray) -> np.ndarray:
        if self.input_map is None:
            return x
        return x[..., list(self.input_map[j])]

    def refit(
        self,
        x_new,
        y_new,
        optimize: bool = False,
        restarts: int = 3,
        seed: int = 0,
        bounds: HyperBounds | None = None,
    ) -> "SurrogateBundle":
        """Append one observation per channel and refit every model."""
        x_new = np.asarray(x_new, dtype=float).reshape(-1)
        y_new = np.asarray(y_new, dtype=float).reshape(-1)
        models = []
        for j, mdl in enumerate(self.models):
            data = mdl.data.append(self.channel_inputs(j, x_new), y_new[j])
            hp = mdl.hyperparams
            if optimize:
                hp = optimize_hyperparams(
                    data, restarts, seed + j, hp.noise_variance, bounds, initial=hp
                )
            models.append(fit(data, hp))
        return replace(self, models=tuple(models))


def build_bundle(
    datasets: Sequence[Dataset],
    input_map=None,
    noise_variance: float = 1e-6,
    restarts: int = 3,
    seed: int = 0,
    bounds: HyperBounds | None = None,
) -> SurrogateBundle:
    """Fit one GP per dataset with freshly optimized hyperparameters."""
    models = []
    for j, data in enumerate(datasets):
        if data.n >= 2:
            hp = optimize_hyperparams(data, restarts, seed + j, noise_variance, bounds)
        else:
            hp = GpHyperparams.default(data.dim, noise_variance)
        models.append(fit(data, hp))
    return SurrogateBundle(tuple(models), input_map)


def bundle_predict(bundle: SurrogateBundle, x):
    """Channel-wise ``(mu, sigma)``; vectors for one point, ``(N, m)`` for many."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    mu = np.empty((pts.shape[0], bundle.m))
    sigma = np.empty_like(mu)
    for j, mdl in enumerate(bundle.models):
        mu[:, j], sigma[:, j] = predict(mdl, bundle.channel_inputs(j, pts).reshape(-1, mdl.dim))
    if single:
        return mu[0], sigma[0]
    return mu, sigma
