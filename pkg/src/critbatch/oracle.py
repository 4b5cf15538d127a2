"""Loss problems and the stochastic first-order oracle.

A problem exposes its deterministic full gradient, single noisy oracle
draws and minibatch averages of those draws.  Parameter vectors are plain
1-D float64 numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("noisy-quadratic", "noisy-rosenbrock", "finite-sum-mlp")


class InvalidBatchError(ValueError):
    """Batch size outside the range a problem can serve."""


def make_rng(seed, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Streams for distinct key tuples are statistically independent, so the
    same (run, batch, replicate) always replays the same draws no matter
    which worker executes it.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(seq)


def _check_dim(problem, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.dimension,):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({problem.dimension},)"
        )
    return theta


@dataclass(frozen=True)
class _Synthetic:
    """Shared oracle for the synthetic kinds.

    Noise is isotropic Gaussian with total variance ``noise_variance`` per
    call, so E||G - grad||^2 equals sigma^2 exactly.
    """

    dimension: int
    noise_variance: float = 0.0
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")

    @property
    def sample_count(self):
        return None

    def _noise_scale(self):
        return math.sqrt(self.noise_variance / self.dimension)

    def stochastic_gradient(self, theta, rng):
        g = self.gradient(theta)
        if self.noise_variance == 0:
            return g
        return g + self._noise_scale() * rng.standard_normal(self.dimension)

    def minibatch_gradient(self, theta, b, rng, replace=True):
        if b < 1:
            raise InvalidBatchError(f"batch size must be >= 1, got {b}")
        g = self.gradient(theta)
        if self.noise_variance == 0:
            return g
        noise = rng.standard_normal((b, self.dimension)).mean(axis=0)
        return g + self._noise_scale() * noise


@dataclass(frozen=True)
class NoisyQuadratic(_Synthetic):
    """L(theta) = 0.5 * ||theta - theta_star||^2 plus Gaussian gradient noise."""

    kind = "noisy-quadratic"

    def __post_init__(self):
        super().__post_init__()
        if self.reference is None:
            object.__setattr__(self, "reference", np.zeros(self.dimension))
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))

    def loss(self, theta):
        r = theta - self.reference
        return 0.5 * float(r @ r)

    def gradient(self, theta):
        return theta - self.reference


@dataclass(frozen=True)
class NoisyRosenbrock(_Synthetic):
    """Chained Rosenbrock function, minimizer at the all-ones vector."""

    kind = "noisy-rosenbrock"

    def __post_init__(self):
        super().__post_init__()
        if self.dimension < 2:
            raise ValueError("rosenbrock needs dimension >= 2")
        object.__setattr__(self, "reference", np.ones(self.dimension))

    def loss(self, theta):
        x, y = theta[:-1], theta[1:]
        return float(np.sum(100.0 * (y - x * x) ** 2 + (1.0 - x) ** 2))

    def gradient(self, theta):
        x, y = theta[:-1], theta[1:]
        t = y - x * x
        g = np.zeros_like(theta)
        g[:-1] = -400.0 * x * t - 2.0 * (1.0 - x)
        g[1:] += 200.0 * t
        return g


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class FiniteSumMLP:
    """Two-layer softplus MLP with logistic loss on two Gaussian clusters.

    The parameter vector packs ``W1 (hidden x 2), b1 (hidden), w2 (hidden),
    b2`` in that order.  Each example's loss is ``softplus(-y * f(x))`` with
    labels in {-1, +1}, so every ell_i is smooth.
    """

    kind = "finite-sum-mlp"
    sample_count: int = 128
    hidden: int = 8
    data_seed: int = 0
    separation: float = 1.5
    features: np.ndarray = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.dimension > 500:
            raise ValueError("MLP must have at most 500 parameters")
        rng = np.random.default_rng(self.data_seed)
        y = np.where(np.arange(self.sample_count) % 2 == 0, 1.0, -1.0)
        centers = np.outer(y, [self.separation, self.separation]) / 2.0
        x = centers + rng.standard_normal((self.sample_count, 2))
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def dimension(self):
        return 4 * self.hidden + 1

    @property
    def noise_variance(self):
        g = self.gradient_table(None)
        dev = g - g.mean(axis=0)
        return float(np.mean(np.sum(dev * dev, axis=1)))

    def init_params(self, rng):
        h = self.hidden
        w1 = rng.standard_normal((h, 2)) / math.sqrt(2.0)
        w2 = rng.standard_normal(h) / math.sqrt(h)
        return np.concatenate([w1.ravel(), np.zeros(h), w2, [0.0]])

    def _unpack(self, theta):
        h = self.hidden
        w1 = theta[: 2 * h].reshape(h, 2)
        b1 = theta[2 * h : 3 * h]
        w2 = theta[3 * h : 4 * h]
        return w1, b1, w2, theta[4 * h]

    def _forward(self, theta, idx):
        x = self.features if idx is None else self.features[idx]
        w1, b1, w2, b2 = self._unpack(theta)
        z = x @ w1.T + b1
        a = _softplus(z)
        return x, z, a, a @ w2 + b2

    def example_losses(self, theta, idx=None):
        y = self.labels if idx is None else self.labels[idx]
        return _softplus(-y * self._forward(theta, idx)[3])

    def loss(self, theta):
        return float(np.mean(self.example_losses(theta)))

    def gradient_table(self, theta, idx=None):
        """Per-example gradients, one row per index (all examples if None)."""
        if theta is None:
            theta = self.reference if self.reference is not None else self.init_params(
                np.random.default_rng(self.data_seed + 1)
            )
        y = self.labels if idx is None else self.labels[idx]
        x, z, a, f = self._forward(theta, idx)
        _, _, w2, _ = self._unpack(theta)
        df = -y * _sigmoid(-y * f)
        dz = (df[:, None] * w2) * _sigmoid(z)
        gw1 = dz[:, :, None] * x[:, None, :]
        return np.concatenate(
            [gw1.reshape(len(df), -1), dz, df[:, None] * a, df[:, None]], axis=1
        )

    def _mean_gradient(self, theta, idx):
        return self.gradient_table(theta, idx).mean(axis=0)

    def gradient(self, theta):
        return self._mean_gradient(theta, np.arange(self.sample_count))

    def stochastic_gradient(self, theta, rng):
        i = rng.integers(self.sample_count, size=1)
        return self._mean_gradient(theta, i)

    def minibatch_gradient(self, theta, b, rng, replace=True):
        if b < 1 or b > self.sample_count:
            raise InvalidBatchError(
                f"batch size {b} outside [1, {self.sample_count}] for a finite sum"
            )
        if replace:
            idx = rng.integers(self.sample_count, size=b)
        else:
            # sorted so that b == n reduces in exactly the full-gradient order
            idx = np.sort(rng.choice(self.sample_count, size=b, replace=False))
        return self._mean_gradient(theta, idx)


def make_problem(kind, dimension=None, noise_variance=0.0, sample_count=128,
                 hidden=8, reference=None, data_seed=0):
    if kind == "noisy-quadratic":
        return NoisyQuadratic(dimension, noise_variance, reference)
    if kind == "noisy-rosenbrock":
        return NoisyRosenbrock(dimension, noise_variance)
    if kind == "finite-sum-mlp":
        return FiniteSumMLP(sample_count=sample_count, hidden=hidden, data_seed=data_seed)
    raise ValueError(f"unknown problem kind {kind!r}; expected one of {KINDS}")


def full_gradient(problem, theta):
    return problem.gradient(_check_dim(problem, theta))


def stochastic_gradient(problem, theta, rng):
    return problem.stochastic_gradient(_check_dim(problem, theta), rng)


def minibatch_gradient(problem, theta, b, rng, replace=True):
    return problem.minibatch_gradient(_check_dim(problem, theta), int(b), rng, replace)


@dataclass
class OracleStats:
    """Empirical stand-ins for the constants that feed the bound formulas.

    Every value is an observed maximum or minimum over a finished run, not a
    proven bound.  ``dist_hat``, ``c2_hat`` and ``x_hat`` are ``None`` when
    no reference point was available (``missing`` lists them).
    """

    sigma2_hat: float
    p2_hat: float
    h0_star: float
    h_cap: float
    c1_hat: float
    dist_hat: Optional[float] = None
    c2_hat: Optional[float] = None
    x_hat: Optional[float] = None
    missing: tuple = ()
    label: str = "empirical-constant"


def estimate_noise_variance(problem, points, samples, rng):
    """Largest Monte Carlo estimate of E||G - grad||^2 over ``points``."""
    best = 0.0
    for theta in points:
        g = problem.gradient(theta)
        acc = 0.0
        for _ in range(samples):
            e = problem.stochastic_gradient(theta, rng) - g
            acc += float(e @ e)
        best = max(best, acc / samples)
    return best


def estimate_oracle_stats(problem, trajectory, samples=1000, rng=None, reference=None):
    """Fill an :class:`OracleStats` from a recorded trajectory.

    ``reference`` defaults to the problem's known minimizer.
    """
    if trajectory.steps == 0 and len(trajectory.thetas) == 0:
        raise ValueError("trajectory is empty")
    if rng is None:
        rng = make_rng(0, 1)
    thetas = trajectory.thetas
    picks = sorted({0, len(thetas) // 2, len(thetas) - 1})
    sigma2 = estimate_noise_variance(problem, [thetas[i] for i in picks], samples, rng)

    grads = np.array([problem.gradient(t) for t in thetas])
    p2 = float(np.max(np.sum(grads * grads, axis=1)))

    h = trajectory.h
    if len(h):
        h0_star = float(h[0].min())
        h_cap = float(h.max())
    else:
        h0_star = h_cap = 1.0

    b = trajectory.batch_size
    d_norm2 = trajectory.d_norms_h()
    if len(d_norm2) and sigma2 > 0:
        c1 = min(1.0, float(d_norm2.min()) * b / sigma2)
    else:
        c1 = 0.0

    if reference is None:
        reference = problem.reference
    if reference is None:
        return OracleStats(sigma2, p2, h0_star, h_cap, c1,
                           missing=("dist_hat", "c2_hat", "x_hat"))

    reference = np.asarray(reference, dtype=float)
    dist = float(np.max((thetas - reference) ** 2))
    c2 = tightest_c2(trajectory, reference, sigma2, p2)
    x = tightest_x(trajectory, reference)
    return OracleStats(sigma2, p2, h0_star, h_cap, c1, dist, c2, x)


def tightest_c2(trajectory, reference, sigma2, p2):
    """Smallest c2 >= 0 with (ref - theta_k)^T m_{k-1} >= -c2 (sigma^2/b + P^2)."""
    if trajectory.steps == 0:
        return 0.0
    inner = np.einsum("kd,kd->k", reference - trajectory.thetas[:-1], trajectory.m_prev)
    scale = sigma2 / trajectory.batch_size + p2
    if scale <= 0:
        return 0.0
    return max(0.0, float(np.max(-inner)) / scale)


def tightest_x(trajectory, reference):
    """min over k >= 1 of (1-gamma)||theta_1 - ref||^2_{H_1} - ||theta_{k+1} - ref||^2_{H_k}."""
    if trajectory.steps < 2:
        return None
    gamma = trajectory.hyper.gamma
    r = trajectory.thetas - reference
    first = (1.0 - gamma) * float(np.sum(trajectory.h[1] * r[1] ** 2))
    later = np.sum(trajectory.h[1:] * r[2:] ** 2, axis=1)
    return first - float(later.max())
