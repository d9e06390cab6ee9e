"""First-order meta-learning kernel (desk-scale, pure numpy).

The kernel is optimizer math only: tasks supply their own loss and analytic
gradient as ``loss(theta, dataset) -> (value, grad)``. One meta step adapts
a copy of theta on the task's support set with ``inner_steps`` plain
gradient steps at rate ``alpha``, evaluates the query-set gradient at the
adapted point, and applies it to the original theta with the outer
optimizer (SGD at rate ``beta``, or Adam). First-order means exactly that:
no curvature term, the query gradient is taken at the adapted parameters
and applied as-is.

Central finite differences (``numerical_gradient`` / ``gradient_check``)
are the single source of truth for every analytic gradient here; the toy
task families below exist to exercise the kernel end to end without any
autodiff dependency.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

LossFn = Callable[[np.ndarray, Any], tuple[float, np.ndarray]]


class FomamlError(RuntimeError):
    """Non-finite or exploding loss; carries the trace up to the failure."""

    def __init__(self, message: str, trace: list[tuple[int, float]] | None = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class MetaTask:
    """One task: disjoint support and query datasets plus the loss."""

    support: Any
    query: Any
    loss: LossFn


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.1
    beta: float = 0.01
    inner_steps: int = 5
    outer_steps: int = 3000
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    divergence_threshold: float = 1e6
    plateau_patience: int | None = None
    plateau_tol: float = 1e-6

    def __post_init__(self) -> None:
        # alpha = 0 is legal (adaptation becomes a no-op and the outer update
        # reduces to plain gradient descent); negative rates are not.
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.outer_steps < 0:
            raise ValueError("outer_steps must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(dim: int) -> "AdamState":
        return AdamState(m=np.zeros(dim), v=np.zeros(dim))


def _adam_update(
    theta: np.ndarray, grad: np.ndarray, state: AdamState, config: MetaConfig
) -> np.ndarray:
    state.t += 1
    state.m = config.adam_beta1 * state.m + (1 - config.adam_beta1) * grad
    state.v = config.adam_beta2 * state.v + (1 - config.adam_beta2) * grad * grad
    m_hat = state.m / (1 - config.adam_beta1 ** state.t)
    v_hat = state.v / (1 - config.adam_beta2 ** state.t)
    return theta - config.beta * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _check_finite(value: float, grad: np.ndarray, where: str) -> None:
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise FomamlError(f"non-finite loss or gradient during {where}")


def inner_adapt(theta: np.ndarray, task: MetaTask, alpha: float, n: int) -> np.ndarray:
    """Apply n plain gradient steps on the support set; theta is not mutated."""
    adapted = np.array(theta, dtype=float, copy=True)
    for _ in range(n):
        value, grad = task.loss(adapted, task.support)
        _check_finite(value, grad, "inner adaptation")
        adapted = adapted - alpha * grad
    return adapted


def _outer_update(
    theta: np.ndarray, task: MetaTask, config: MetaConfig, adam_state: AdamState | None
) -> tuple[np.ndarray, float]:
    adapted = inner_adapt(theta, task, config.alpha, config.inner_steps)
    query_loss, query_grad = task.loss(adapted, task.query)
    _check_finite(query_loss, query_grad, "query evaluation")
    if config.optimizer == "adam":
        if adam_state is None:
            raise ValueError("adam optimizer needs an AdamState")
        return _adam_update(theta, query_grad, adam_state, config), query_loss
    return theta - config.beta * query_grad, query_loss


def fomaml_step(
    theta: np.ndarray,
    task: MetaTask,
    config: MetaConfig,
    adam_state: AdamState | None = None,
) -> np.ndarray:
    """One full meta step; returns the new theta (input untouched)."""
    if config.optimizer == "adam" and adam_state is None:
        adam_state = AdamState.zeros(theta.size)
    new_theta, _ = _outer_update(np.asarray(theta, dtype=float), task, config, adam_state)
    return new_theta


@dataclass
class MetaTrainResult:
    theta: np.ndarray
    trace: list[tuple[int, float]] = field(default_factory=list)
    stopped: str = "completed"


def meta_train(
    sampler: "TaskSampler",
    config: MetaConfig,
    seed: int = 0,
    init: np.ndarray | None = None,
) -> MetaTrainResult:
    """Meta-train from a fresh (or given) initialization, one sampled task
    per outer step. Deterministic given (sampler state, config, seed).

    The trace records (step, query loss) for every step taken. Divergence
    (non-finite or loss above the threshold) raises FomamlError with the
    partial trace attached.
    """
    rng = np.random.default_rng(seed)
    theta = (
        np.array(init, dtype=float, copy=True)
        if init is not None
        else sampler.init_params(rng)
    )
    adam_state = AdamState.zeros(theta.size) if config.optimizer == "adam" else None
    trace: list[tuple[int, float]] = []
    best = np.inf
    stale = 0
    stopped = "completed"
    for step in range(config.outer_steps):
        task = sampler.sample()
        try:
            theta, query_loss = _outer_update(theta, task, config, adam_state)
        except FomamlError as exc:
            raise FomamlError(str(exc), trace) from None
        trace.append((step, query_loss))
        if query_loss > config.divergence_threshold:
            raise FomamlError(
                f"query loss {query_loss:.3g} above divergence threshold "
                f"{config.divergence_threshold:.3g} at step {step}",
                trace,
            )
        if config.plateau_patience is not None:
            if query_loss < best - config.plateau_tol:
                best = query_loss
                stale = 0
            else:
                stale += 1
                if stale >= config.plateau_patience:
                    stopped = "plateau"
                    break
    return MetaTrainResult(theta=theta, trace=trace, stopped=stopped)


def trace_to_csv(trace: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "query_loss"])
        for step, loss in trace:
            writer.writerow([step, f"{loss:.10g}"])


def numerical_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by
    coordinate."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = step
        grad[i] = (f(theta + bump) - f(theta - bump)) / (2 * step)
    return grad


def gradient_check(
    loss: LossFn, theta: np.ndarray, dataset: Any, step: float = 1e-5
) -> float:
    """Relative error between a task's analytic gradient and central finite
    differences at theta."""
    _, analytic = loss(np.asarray(theta, dtype=float), dataset)
    numeric = numerical_gradient(lambda v: loss(v, dataset)[0], theta, step)
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


# ---------------------------------------------------------------------------
# Toy task families (analytic gradients, no autodiff anywhere)
# ---------------------------------------------------------------------------


class SineRegressionSampler:
    """Sine curves y = A sin(x + phi) with A ~ U[1, 5], phi ~ U[0, pi],
    x ~ U[-2.5, 2.5], fit by a one-hidden-layer tanh network under squared
    error.

    Family bounds are chosen so the demo discriminates: amplitudes bounded
    away from zero keep the constant-zero predictor bad on every task, and
    under one period in the window lets six support points pin the curve.
    Inputs are scaled by 1/5 inside the model; without it the support
    gradients overshoot at moderate inner rates. Parameter layout:
    [W1 (hidden), b1 (hidden), W2 (hidden), b2 (1)].
    """

    X_SCALE = 0.2
    AMPLITUDE = (1.0, 5.0)
    X_RANGE = (-2.5, 2.5)

    kind = "sine_regression"

    def __init__(
        self,
        seed: int = 0,
        hidden: int = 32,
        support_size: int = 6,
        query_size: int = 6,
    ):
        self.rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.support_size = support_size
        self.query_size = query_size
        self.dim = 3 * hidden + 1

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        h = self.hidden
        return np.concatenate([
            rng.normal(0.0, 1.0, h),
            rng.uniform(-3.0, 3.0, h),
            rng.normal(0.0, 1.0 / np.sqrt(h), h),
            np.zeros(1),
        ])

    def _unpack(self, theta: np.ndarray):
        h = self.hidden
        return theta[:h], theta[h : 2 * h], theta[2 * h : 3 * h], theta[3 * h]

    def loss(self, theta: np.ndarray, dataset: tuple[np.ndarray, np.ndarray]):
        x, y = dataset
        xs = x * self.X_SCALE
        w1, b1, w2, b2 = self._unpack(theta)
        z = np.outer(xs, w1) + b1
        a = np.tanh(z)
        pred = a @ w2 + b2
        residual = pred - y
        m = x.size
        value = float(residual @ residual) / m
        d_pred = 2.0 * residual / m
        d_w2 = a.T @ d_pred
        d_b2 = d_pred.sum()
        d_z = np.outer(d_pred, w2) * (1.0 - a * a)
        d_w1 = xs @ d_z
        d_b1 = d_z.sum(axis=0)
        return value, np.concatenate([d_w1, d_b1, d_w2, [d_b2]])

    def sample(self) -> MetaTask:
        amplitude = self.rng.uniform(*self.AMPLITUDE)
        phase = self.rng.uniform(0.0, np.pi)
        n = self.support_size + self.query_size
        x = self.rng.uniform(*self.X_RANGE, n)
        y = amplitude * np.sin(x + phase)
        return MetaTask(
            support=(x[: self.support_size], y[: self.support_size]),
            query=(x[self.support_size :], y[self.support_size :]),
            loss=self.loss,
        )


class LogisticTaskSampler:
    """Random 5-dimensional linear classification tasks under cross-entropy.

    Each task draws a ground-truth direction; labels are the sign of the
    projection. Gradient is the classic X^T (sigmoid(z) - y) / m.
    """

    kind = "logistic_2class"

    def __init__(self, seed: int = 0, support_size: int = 6, query_size: int = 6):
        self.rng = np.random.default_rng(seed)
        self.support_size = support_size
        self.query_size = query_size
        self.dim = 5

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, 0.5, self.dim)

    def loss(self, theta: np.ndarray, dataset: tuple[np.ndarray, np.ndarray]):
        x, y = dataset
        z = x @ theta
        # softplus(z) - y*z, computed stably
        value = float(np.mean(np.logaddexp(0.0, z) - y * z))
        p = 1.0 / (1.0 + np.exp(-z))
        grad = x.T @ (p - y) / y.size
        return value, grad

    def sample(self) -> MetaTask:
        n = self.support_size + self.query_size
        direction = self.rng.normal(0.0, 1.0, self.dim)
        x = self.rng.normal(0.0, 1.0, (n, self.dim))
        y = (x @ direction > 0.0).astype(float)
        return MetaTask(
            support=(x[: self.support_size], y[: self.support_size]),
            query=(x[self.support_size :], y[self.support_size :]),
            loss=self.loss,
        )


TaskSampler = SineRegressionSampler | LogisticTaskSampler

TOY_SAMPLERS = {
    SineRegressionSampler.kind: SineRegressionSampler,
    LogisticTaskSampler.kind: LogisticTaskSampler,
}


def toy_task_sampler(kind: str, seed: int = 0, **kwargs) -> TaskSampler:
    if kind not in TOY_SAMPLERS:
        raise ValueError(f"unknown task family {kind!r} (have {sorted(TOY_SAMPLERS)})")
    return TOY_SAMPLERS[kind](seed=seed, **kwargs)


def adaptation_win_rate(
    theta_a: np.ndarray,
    theta_b: np.ndarray,
    tasks: Sequence[MetaTask],
    alpha: float,
    inner_steps: int,
) -> float:
    """Fraction of tasks where theta_a beats theta_b on query loss after
    identical adaptation. Used to compare a meta-trained init against a
    random one."""
    if not tasks:
        raise FomamlError("win rate needs at least one task")
    wins = 0
    for task in tasks:
        loss_a = task.loss(inner_adapt(theta_a, task, alpha, inner_steps), task.query)[0]
        loss_b = task.loss(inner_adapt(theta_b, task, alpha, inner_steps), task.query)[0]
        if loss_a < loss_b:
            wins += 1
    return wins / len(tasks)
