"""Unified adaptive optimizer with diagonal preconditioner rules.

One update, for every rule::

    m_k     = beta * m_{k-1} + (1 - beta) * g_k
    mhat_k  = m_k / (1 - gamma**(k+1))
    h_k     = rule-specific positive diagonal
    d_k     = -mhat_k / h_k
    theta_{k+1} = theta_k + alpha * d_k

The rules are SGD, Momentum (identity preconditioner), AMSGrad, AMSBound,
Adam and AdaBelief.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .oracle import make_rng

RULE_NAMES = ("sgd", "momentum", "amsgrad", "amsbound", "adam", "adabelief")


class DivergenceError(FloatingPointError):
    """A non-finite value appeared during an update."""

    def __init__(self, step, message="non-finite value", trajectory=None):
        super().__init__(f"{message} at step {step}")
        self.step = step
        self.trajectory = trajectory


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    beta: float = 0.0
    gamma: float = 0.0
    eta: float = 0.999
    zeta: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        for name in ("beta", "gamma", "eta", "zeta"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class Rule:
    """A preconditioner rule.

    ``bound_scale`` is the limit c of the AMSBound clip schedules
    ``l_k = c (1 - 1/((1-eta)(k+1) + 1))`` and ``u_k = c (1 + 1/((1-eta)(k+1)))``.
    """

    name: str
    bound_scale: float = 0.1

    def __post_init__(self):
        if self.name not in RULE_NAMES:
            raise ValueError(f"unknown rule {self.name!r}; expected one of {RULE_NAMES}")

    def effective(self, hyper: HyperParams) -> HyperParams:
        """Hyperparameters with the coefficients this rule pins to zero."""
        if self.name == "sgd":
            return replace(hyper, beta=0.0, gamma=0.0)
        if self.name in ("momentum", "amsgrad", "amsbound"):
            return replace(hyper, gamma=0.0)
        return hyper

    def clip_bounds(self, k, eta):
        t = (1.0 - eta) * (k + 1)
        return self.bound_scale * (1.0 - 1.0 / (t + 1.0)), self.bound_scale * (1.0 + 1.0 / t)

    @property
    def monotone(self):
        """True for rules whose diagonal never decreases."""
        return self.name in ("sgd", "momentum", "amsgrad", "amsbound")


SGD = Rule("sgd")
MOMENTUM = Rule("momentum")
AMSGRAD = Rule("amsgrad")
AMSBOUND = Rule("amsbound")
ADAM = Rule("adam")
ADABELIEF = Rule("adabelief")
ALL_RULES = (SGD, MOMENTUM, AMSGRAD, AMSBOUND, ADAM, ADABELIEF)


def get_rule(name, bound_scale=0.1):
    return Rule(name.lower(), bound_scale)


def clamp(x, lo, hi):
    """Clip ``x`` into ``[lo, hi]``; works elementwise on arrays."""
    if lo > hi:
        raise ValueError(f"clamp needs lo <= hi, got lo={lo}, hi={hi}")
    if np.ndim(x) == 0:
        return lo if x < lo else hi if x > hi else x
    return np.clip(x, lo, hi)


@dataclass
class OptimizerState:
    """State before step ``step``; ``m`` holds m_{k-1}.

    ``h``, ``m_hat`` and ``d`` describe the most recent update (``None``
    before the first one).
    """

    step: int
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    s: np.ndarray
    h: Optional[np.ndarray] = None
    m_hat: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, theta0):
        theta0 = np.array(theta0, dtype=float)
        z = np.zeros_like(theta0)
        return cls(0, theta0, z, z.copy(), z.copy(), z.copy())


def update_preconditioner(rule, state, grad, m_current, hyper):
    """Diagonal of H_k for ``rule`` plus the updated accumulators.

    Returns ``(h, v, v_hat, s)``.  Every entry of ``h`` is floored at
    ``hyper.epsilon``.
    """
    k = state.step
    eta, zeta, eps = hyper.eta, hyper.zeta, hyper.epsilon
    v, v_hat, s = state.v, state.v_hat, state.s
    name = rule.name

    if name in ("sgd", "momentum"):
        return np.ones_like(grad), v, v_hat, s

    if name in ("amsgrad", "amsbound", "adam"):
        v = eta * v + (1.0 - eta) * grad * grad

    if name == "amsgrad":
        v_hat = np.maximum(v_hat, v)
        h = np.sqrt(v_hat)
    elif name == "amsbound":
        v_hat = np.maximum(v_hat, v)
        lo, hi = rule.clip_bounds(k, eta)
        with np.errstate(divide="ignore"):
            inv = 1.0 / np.sqrt(v_hat)
        h = 1.0 / clamp(inv, lo, hi)
    elif name == "adam":
        h = np.sqrt(v / (1.0 - zeta ** (k + 1)))
    else:  # adabelief
        dev = grad - m_current
        s = eta * s + (1.0 - eta) * dev * dev
        h = np.sqrt(s / (1.0 - zeta ** (k + 1)))
    return np.maximum(h, eps), v, v_hat, s


def step(state, grad, hyper, rule):
    """One update of the unified optimizer; returns the next state."""
    hyper = rule.effective(hyper)
    k = state.step
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(k, "non-finite gradient")
    m = hyper.beta * state.m + (1.0 - hyper.beta) * grad
    m_hat = m / (1.0 - hyper.gamma ** (k + 1))
    h, v, v_hat, s = update_preconditioner(rule, state, grad, m, hyper)
    d = -m_hat / h
    theta = state.theta + hyper.alpha * d
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(k, "non-finite iterate")
    return OptimizerState(k + 1, theta, m, v, v_hat, s, h, m_hat, d)


@dataclass(frozen=True)
class StopCondition:
    """Stop when any set criterion is met.

    ``tau`` is a loss threshold on the full objective.  ``max_epochs`` is
    converted to steps with ``steps_per_epoch``.
    """

    tau: Optional[float] = None
    max_steps: Optional[int] = None
    max_epochs: Optional[int] = None
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.tau is None and self.max_steps is None and self.max_epochs is None:
            raise ValueError("stop condition needs tau, max_steps or max_epochs")

    def step_budget(self):
        caps = []
        if self.max_steps is not None:
            caps.append(self.max_steps)
        if self.max_epochs is not None:
            caps.append(self.max_epochs * self.steps_per_epoch)
        return min(caps) if caps else None


@dataclass
class Trajectory:
    """Everything one run produced, one row per executed step.

    ``thetas`` and ``losses`` have ``steps + 1`` rows (the final iterate is
    included); the per-step arrays have ``steps`` rows.  Row k of ``m_prev``
    is m_{k-1}.
    """

    hyper: HyperParams
    rule: Rule
    batch_size: int
    seed: object
    thetas: np.ndarray
    losses: np.ndarray
    grads: np.ndarray
    true_grads: np.ndarray
    m_prev: np.ndarray
    m: np.ndarray
    m_hat: np.ndarray
    h: np.ndarray
    d: np.ndarray
    stopped_by: str = "budget"

    @property
    def steps(self):
        return len(self.d)

    @property
    def dimension(self):
        return self.thetas.shape[1]

    def gamma_tilde(self):
        return 1.0 - self.hyper.gamma ** (np.arange(self.steps) + 1.0)

    def d_norms_h(self):
        return np.sum(self.h * self.d * self.d, axis=1)

    def to_csv(self):
        """Line-per-step summary table as CSV text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "loss", "grad_norm", "m_norm", "d_norm", "h_min", "h_max"])
        for k in range(self.steps):
            w.writerow([
                k,
                fmt(self.losses[k]),
                fmt(np.linalg.norm(self.grads[k])),
                fmt(np.linalg.norm(self.m[k])),
                fmt(np.linalg.norm(self.d[k])),
                fmt(self.h[k].min()),
                fmt(self.h[k].max()),
            ])
        return buf.getvalue()


def fmt(x):
    """17 significant digits: every float64 round-trips exactly."""
    return format(float(x), ".17g")


def run(problem, hyper, rule, b, stop, seed=0, theta0=None, rng=None, replace=True):
    """Iterate :func:`step` with fresh minibatch gradients until ``stop``.

    The loss threshold is checked on the full objective before each step,
    so ``K`` is the first index with ``L(theta_K) <= tau``.  On divergence
    the partial trajectory is attached to the raised error.
    """
    if rng is None:
        rng = make_rng(seed, b)
    if theta0 is None:
        theta0 = np.ones(problem.dimension)
    state = OptimizerState.initial(theta0)
    eff = rule.effective(hyper)
    budget = stop.step_budget()

    thetas, losses, true_grads = [], [], []
    grads, m_prev, ms, m_hats, hs, ds = [], [], [], [], [], []

    def build(stopped_by):
        d = problem.dimension
        stack = lambda xs: np.array(xs, dtype=float).reshape(len(xs), d)
        return Trajectory(
            eff, rule, b, seed,
            stack(thetas), np.array(losses, dtype=float), stack(grads),
            stack(true_grads[: len(grads)]), stack(m_prev), stack(ms),
            stack(m_hats), stack(hs), stack(ds), stopped_by,
        )

    stopped_by = "budget"
    while True:
        theta = state.theta
        loss = problem.loss(theta)
        thetas.append(theta)
        losses.append(loss)
        if not math.isfinite(loss):
            raise DivergenceError(state.step, "non-finite loss", build("diverged"))
        if stop.tau is not None and loss <= stop.tau:
            stopped_by = "tau"
            break
        if budget is not None and state.step >= budget:
            break
        g = problem.minibatch_gradient(theta, b, rng, replace)
        true_grads.append(problem.gradient(theta))
        try:
            new = step(state, g, hyper, rule)
        except DivergenceError as err:
            err.trajectory = build("diverged")
            raise
        grads.append(g)
        m_prev.append(state.m)
        ms.append(new.m)
        m_hats.append(new.m_hat)
        hs.append(new.h)
        ds.append(new.d)
        state = new
    return build(stopped_by)
