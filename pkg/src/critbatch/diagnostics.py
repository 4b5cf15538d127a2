"""Checks of the optimizer's exact per-step identity and its bounds on
recorded trajectories.

The per-step identity, for any fixed reference point ``ref``::

    ||th_{k+1} - ref||^2_H - ||th_k - ref||^2_H - alpha^2 ||d_k||^2_H
        = 2 alpha [ (beta/gt_k) (ref - th_k)^T m_{k-1}
                    + ((1-beta)/gt_k) (ref - th_k)^T g_k ]

holds exactly (up to rounding) whatever the gradient noise, with
``H = H_k`` and ``gt_k = 1 - gamma**(k+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .oracle import tightest_c2, tightest_x

IDENTITY_TOL = 1e-9


class MissingFieldError(ValueError):
    pass


def _require(traj, names):
    missing = [n for n in names if getattr(traj, n, None) is None]
    if missing:
        raise MissingFieldError(f"trajectory lacks {', '.join(missing)}")


def _reference(traj, theta_ref):
    if theta_ref is None:
        theta_ref = np.zeros(traj.dimension)
    return np.asarray(theta_ref, dtype=float)


@dataclass
class IdentityResiduals:
    residuals: np.ndarray
    scaled: np.ndarray

    @property
    def max_scaled(self):
        return float(self.scaled.max()) if len(self.scaled) else 0.0

    @property
    def worst_step(self):
        return int(np.argmax(self.scaled)) if len(self.scaled) else None


def identity_terms(traj, theta_ref):
    """The five per-step terms of the identity, each of shape (steps,)."""
    _require(traj, ("thetas", "d", "h", "m_prev", "grads"))
    k = traj.steps
    alpha, beta = traj.hyper.alpha, traj.hyper.beta
    gt = traj.gamma_tilde()
    h = traj.h
    r_now = traj.thetas[:k] - theta_ref
    r_next = traj.thetas[1 : k + 1] - theta_ref
    after = np.sum(h * r_next * r_next, axis=1)
    before = np.sum(h * r_now * r_now, axis=1)
    move = alpha**2 * traj.d_norms_h()
    mom = 2 * alpha * beta / gt * np.einsum("kd,kd->k", -r_now, traj.m_prev)
    grad = 2 * alpha * (1 - beta) / gt * np.einsum("kd,kd->k", -r_now, traj.grads)
    return after, before, move, mom, grad


def pathwise_identity_residuals(traj, theta_ref=None) -> IdentityResiduals:
    """Residual of the per-step identity, raw and scaled by the largest term."""
    after, before, move, mom, grad = identity_terms(traj, _reference(traj, theta_ref))
    res = after - before - move - mom - grad
    scale = np.max(np.abs(np.vstack([after, before, move, mom, grad])), axis=0)
    scaled = np.abs(res) / np.where(scale > 0, scale, 1.0)
    return IdentityResiduals(res, scaled)


@dataclass
class DecompositionReport:
    K: int
    v_hat: float
    gamma_term: float
    a_term: float
    b_term: float

    @property
    def residual(self):
        return self.v_hat - (self.gamma_term + self.a_term + self.b_term)

    @property
    def scaled_residual(self):
        scale = max(abs(self.v_hat), abs(self.gamma_term), abs(self.a_term), abs(self.b_term))
        return abs(self.residual) / scale if scale > 0 else 0.0


def decompose_v(traj, theta_ref=None, K=None, sampled=False) -> DecompositionReport:
    """Split the horizon-averaged gap into its distance, step and momentum terms.

    Sums run over k = 1..K.  ``v_hat`` averages (th_k - ref)^T grad L(th_k);
    with ``sampled=True`` the minibatch gradient actually used replaces the
    true one, which makes the split exact for any noise level.
    """
    theta_ref = _reference(traj, theta_ref)
    if K is None:
        K = traj.steps - 1
    if not 1 <= K <= traj.steps - 1:
        raise ValueError(f"K must lie in [1, {traj.steps - 1}], got {K}")
    alpha, beta = traj.hyper.alpha, traj.hyper.beta
    tb = 1.0 - beta
    ks = slice(1, K + 1)
    gt = traj.gamma_tilde()[ks]
    h = traj.h[ks]
    r_now = traj.thetas[ks] - theta_ref
    r_next = traj.thetas[2 : K + 2] - theta_ref

    g = traj.grads[ks] if sampled else traj.true_grads[ks]
    v_hat = float(np.mean(np.einsum("kd,kd->k", r_now, g)))
    gamma_sum = float(np.sum(gt * (np.sum(h * r_now**2, axis=1) - np.sum(h * r_next**2, axis=1))))
    a_sum = float(np.sum(gt * traj.d_norms_h()[ks]))
    b_sum = float(np.sum(np.einsum("kd,kd->k", -r_now, traj.m_prev[ks])))
    return DecompositionReport(
        K, v_hat,
        gamma_sum / (2 * alpha * tb * K),
        alpha * a_sum / (2 * tb * K),
        beta * b_sum / (tb * K),
    )


@dataclass
class MomentumBoundReport:
    m_avg: float
    m_stderr: float
    m_bound: float
    d_avg: float
    d_stderr: float
    d_bound: float
    pathwise_worst: float
    pathwise_step: Optional[int]
    pathwise_tol: float = 1e-12

    @property
    def m_margin(self):
        return self.m_bound - self.m_avg

    @property
    def d_margin(self):
        return self.d_bound - self.d_avg

    def m_passes(self, z=3.0):
        return self.m_avg <= self.m_bound + z * self.m_stderr

    def d_passes(self, z=3.0):
        return self.d_avg <= self.d_bound + z * self.d_stderr

    @property
    def pathwise_passes(self):
        return self.pathwise_worst <= self.pathwise_tol


def direction_bound_excess(traj):
    """Per-step relative excess of ||d||^2_H gt^2 min(h) over ||m||^2.

    Non-positive at every step (up to rounding) for any rule.
    """
    gt = traj.gamma_tilde()
    lhs = traj.d_norms_h() * gt**2 * traj.h.min(axis=1)
    rhs = np.sum(traj.m * traj.m, axis=1)
    return (lhs - rhs) / np.where(rhs > 0, rhs, 1.0)


def _mean_stderr(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


def momentum_bound_check(trajs, stats, b) -> MomentumBoundReport:
    """Compare time-averaged ||m_k||^2 and ||d_k||^2_H against their bounds.

    ``trajs`` is one trajectory or a list of independent ones; the standard
    error is taken across them.
    """
    if not isinstance(trajs, (list, tuple)):
        trajs = [trajs]
    trajs = [t for t in trajs if t.steps > 0]
    noise = stats.sigma2_hat / b + stats.p2_hat
    gamma = trajs[0].hyper.gamma if trajs else 0.0
    m_avgs = [float(np.mean(np.sum(t.m * t.m, axis=1))) for t in trajs]
    d_avgs = [float(np.mean(t.d_norms_h())) for t in trajs]
    m_avg, m_se = _mean_stderr(m_avgs) if trajs else (0.0, 0.0)
    d_avg, d_se = _mean_stderr(d_avgs) if trajs else (0.0, 0.0)

    worst, where = -np.inf, None
    for t in trajs:
        ex = direction_bound_excess(t)
        i = int(np.argmax(ex))
        if ex[i] > worst:
            worst, where = float(ex[i]), i
    return MomentumBoundReport(
        m_avg, m_se, noise,
        d_avg, d_se, noise / ((1 - gamma) ** 2 * stats.h0_star),
        worst if trajs else 0.0, where,
    )


@dataclass
class AuditReport:
    rule: str
    a1_violations: int
    a1_checks: int
    a1_first_violation: Optional[int]
    p2_hat: float
    dist_hat: Optional[float]
    c1_hat: float
    c2_hat: Optional[float]
    x_hat: Optional[float]
    gate_below_fraction: Optional[float]
    notes: list = field(default_factory=list)

    @property
    def a1_rate(self):
        return self.a1_violations / self.a1_checks if self.a1_checks else 0.0

    @property
    def x_flagged(self):
        return self.x_hat is not None and self.x_hat <= 0

    def as_text(self):
        """Flat ``key = value`` block."""
        lines = []
        for key, value in self.__dict__.items():
            if key == "notes":
                continue
            lines.append(f"{key} = {'' if value is None else value}")
        lines.append(f"a1_rate = {self.a1_rate}")
        lines.append(f"x_flagged = {self.x_flagged}")
        for n in self.notes:
            lines.append(f"note = {n}")
        return "\n".join(lines) + "\n"


def assumption_audit(traj, stats, theta_star=None, eps=0.1, delta=0.01) -> AuditReport:
    """Status of each standing assumption on a finished run.

    The monotone-preconditioner check is exact.  The gate fraction is the
    share of horizons K whose running average of (th_k - ref)^T grad L(th_k)
    falls below delta * eps^2; for a single sample path this is reported,
    never asserted.
    """
    h = traj.h
    if traj.steps >= 2:
        drops = h[1:] < h[:-1]
        violations = int(drops.sum())
        checks = drops.size
        rows = np.nonzero(drops.any(axis=1))[0]
        first = int(rows[0]) + 1 if len(rows) else None
    else:
        violations, checks, first = 0, 0, None

    notes = []
    c2 = x = frac = None
    if theta_star is None:
        notes.append("no reference minimizer: c2_hat and x_hat absent")
    else:
        theta_star = np.asarray(theta_star, dtype=float)
        c2 = tightest_c2(traj, theta_star, stats.sigma2_hat, stats.p2_hat)
        x = tightest_x(traj, theta_star)
        if traj.steps:
            inner = np.einsum("kd,kd->k", traj.thetas[: traj.steps] - theta_star, traj.true_grads)
            running = np.cumsum(inner) / np.arange(1, traj.steps + 1)
            frac = float(np.mean(running < delta * eps**2))
    if x is not None and x <= 0:
        notes.append("x_hat <= 0: later iterates are not closer than the first")
    if not traj.rule.monotone and violations:
        notes.append("preconditioner decreased at some steps (allowed for this rule)")
    return AuditReport(
        traj.rule.name, violations, checks, first,
        stats.p2_hat, stats.dist_hat, stats.c1_hat, c2, x, frac, notes,
    )


def residuals_csv(res: IdentityResiduals):
    from .optimizer import fmt

    lines = ["k,residual,scaled"]
    for k, (r, s) in enumerate(zip(res.residuals, res.scaled)):
        lines.append(f"{k},{fmt(r)},{fmt(s)}")
    return "\n".join(lines) + "\n"
