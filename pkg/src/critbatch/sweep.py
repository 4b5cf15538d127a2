"""Batch-size sweeps: steps to a loss threshold, SFO complexity K*b, and
the empirical critical batch size."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .optimizer import DivergenceError, OptimizerState, fmt, step
from .oracle import make_rng

STATUSES = ("ok", "timeout", "diverged")


class NoDataError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class SweepRecord:
    b: int
    K: Optional[int]
    terminal_loss: float
    wall_time: float = 0.0
    seed: int = 0
    status: str = "ok"

    @property
    def sfo(self):
        return None if self.K is None else self.K * self.b

    @property
    def ok(self):
        return self.status == "ok"


def steps_per_epoch(problem, b, epoch_steps=100):
    """ceil(n / b) for a finite sum, ``epoch_steps`` for synthetic kinds."""
    n = problem.sample_count
    return math.ceil(n / b) if n else epoch_steps


def steps_to_threshold(problem, rule, hyper, b, tau, budget=200, seed=0,
                       theta0=None, epoch_steps=100, master_seed=0, replace=True):
    """Run one optimizer until the full loss drops to ``tau`` or the budget
    (in epochs) runs out.

    Synthetic kinds check the loss every step, the finite sum once per
    epoch.  Divergence is recorded as a ``diverged`` record.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if budget < 1:
        raise ValueError("budget must be at least one epoch")
    spe = steps_per_epoch(problem, b, epoch_steps)
    every = spe if problem.sample_count else 1
    max_steps = budget * spe
    rng = make_rng(master_seed, b, seed)
    if theta0 is None:
        theta0 = np.ones(problem.dimension)
    state = OptimizerState.initial(theta0)

    start = time.perf_counter()
    loss = problem.loss(state.theta)
    status = "timeout"
    try:
        while True:
            if state.step % every == 0:
                loss = problem.loss(state.theta)
                if not math.isfinite(loss):
                    raise DivergenceError(state.step, "non-finite loss")
                if loss <= tau:
                    status = "ok"
                    break
            if state.step >= max_steps:
                break
            g = problem.minibatch_gradient(state.theta, b, rng, replace)
            state = step(state, g, hyper, rule)
    except DivergenceError:
        status = "diverged"
        loss = math.inf
    if status == "timeout":
        loss = problem.loss(state.theta)
    elapsed = time.perf_counter() - start
    k = state.step if status == "ok" else None
    return SweepRecord(int(b), k, float(loss), elapsed, int(seed), status)


def _run_one(args):
    return steps_to_threshold(*args[0], **args[1])


def sfo_sweep(problem, rule, hyper, batches, tau, budget=200, seeds=5, theta0=None,
              epoch_steps=100, master_seed=0, workers=1, replace=True):
    """One record per (b, seed), in that order whatever the worker count."""
    batches = list(batches)
    if not batches:
        raise ValueError("batch list is empty")
    if batches != sorted(batches):
        raise ValueError("batch list must be sorted ascending")
    jobs = [
        ((problem, rule, hyper, b, tau, budget, s),
         dict(theta0=theta0, epoch_steps=epoch_steps, master_seed=master_seed, replace=replace))
        for b in batches for s in range(seeds)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


class SummaryRow(NamedTuple):
    b: int
    K_median: Optional[float]
    sfo_median: Optional[float]
    n_ok: int


def summarize(records):
    """Median K and K*b per batch size.

    Timeouts count as +inf, so the median exists only while most seeds
    reached the threshold.
    """
    by_b = {}
    for r in records:
        by_b.setdefault(r.b, []).append(r)
    rows = []
    for b in sorted(by_b):
        rs = by_b[b]
        ks = [r.K if r.ok else math.inf for r in rs]
        med = float(np.median(ks))
        if math.isinf(med):
            rows.append(SummaryRow(b, None, None, sum(r.ok for r in rs)))
        else:
            rows.append(SummaryRow(b, med, med * b, sum(r.ok for r in rs)))
    return rows


def _usable(records):
    return [r for r in summarize(records) if r.K_median is not None]


def estimate_critical_batch(records):
    """Smallest b attaining the minimum median K*b; returns ``(b, min_sfo)``."""
    rows = _usable(records)
    if not rows:
        raise NoDataError("no batch size reached the threshold")
    best = min(r.sfo_median for r in rows)
    for r in rows:
        if r.sfo_median == best:
            return r.b, best


def _halving(k0, k1, tol):
    ratio = k1 / k0
    return 0.5 - tol <= ratio <= 0.5 + tol


def detect_perfect_scaling(records, tol=0.1):
    """Largest b such that K halves (within ``tol``) on every doubling from
    the smallest usable batch size up to b."""
    rows = _usable(records)
    if len(rows) < 2:
        raise NoDataError("need at least two batch sizes that reached the threshold")
    end = rows[0].b
    for prev, cur in zip(rows, rows[1:]):
        if cur.b != 2 * prev.b or not _halving(prev.K_median, cur.K_median, tol):
            break
        end = cur.b
    return end


def halving_runs(records, tol=0.1):
    """All maximal runs of consecutive halving doublings as ``(b_start, b_end, n)``."""
    rows = _usable(records)
    runs, start, n = [], None, 0
    for prev, cur in zip(rows, rows[1:]):
        if cur.b == 2 * prev.b and _halving(prev.K_median, cur.K_median, tol):
            if start is None:
                start, n = prev.b, 0
            n += 1
            end = cur.b
        elif start is not None:
            runs.append((start, end, n))
            start = None
    if start is not None:
        runs.append((start, end, n))
    return runs


class RationalFit(NamedTuple):
    a_hat: float
    b_hat: float
    c_hat: float
    residual_norm: float

    @property
    def asymptote(self):
        return self.a_hat / self.c_hat

    @property
    def critical_batch(self):
        return 2.0 * self.b_hat / self.c_hat

    def predict(self, b):
        return self.a_hat * b / (self.c_hat * b - self.b_hat)


def fit_rational(records, max_cond=1e12):
    """Least-squares fit of K(b) ~ a b / (c b - b0) with c fixed to 1.

    Minimizes sum (K (b - b0) - a b)^2, which is linear in (a, b0).
    """
    rows = _usable(records)
    if len(rows) < 4:
        raise FitError(f"need at least 4 usable batch sizes, got {len(rows)}")
    b = np.array([r.b for r in rows], dtype=float)
    k = np.array([r.K_median for r in rows], dtype=float)
    design = np.column_stack([b, k])
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > max_cond:
        raise FitError(f"ill-conditioned fit (condition number {cond:.3g})")
    (a_hat, b_hat), *_ = np.linalg.lstsq(design, k * b, rcond=None)
    if np.any(b - b_hat <= 0):
        raise FitError("fitted pole lies inside the data range")
    resid = k * (b - b_hat) - a_hat * b
    return RationalFit(float(a_hat), float(b_hat), 1.0, float(np.linalg.norm(resid)))


def records_csv(records, wall_time=True):
    """Sweep records as CSV; ``wall_time=False`` leaves that column empty so
    the file depends only on the configuration and seed."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "seed", "K", "sfo", "terminal_loss", "wall_time_s", "status"])
    for r in records:
        w.writerow([
            r.b, r.seed,
            "" if r.K is None else r.K,
            "" if r.sfo is None else r.sfo,
            fmt(r.terminal_loss),
            fmt(r.wall_time) if wall_time else "",
            r.status,
        ])
    return buf.getvalue()


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "K_median", "sfo_median", "n_ok"])
    for r in rows:
        w.writerow([
            r.b,
            "" if r.K_median is None else fmt(r.K_median),
            "" if r.sfo_median is None else fmt(r.sfo_median),
            r.n_ok,
        ])
    return buf.getvalue()


def read_records_csv(text):
    """Parse the CSV written by :func:`records_csv`."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        k = int(row["K"]) if row["K"] else None
        out.append(SweepRecord(
            int(row["b"]), k, float(row["terminal_loss"]),
            float(row["wall_time_s"]) if row["wall_time_s"] else 0.0,
            int(row["seed"]), row["status"],
        ))
    return out
