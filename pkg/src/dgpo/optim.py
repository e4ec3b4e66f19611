"""Adam / plain SGD, EMA tracking and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ModelParams


@dataclass
class OptimizerState:
    lr: float
    mode: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")

    @classmethod
    def for_params(cls, params: ModelParams, lr: float, mode: str = "adam", **kw) -> "OptimizerState":
        n = params.values.size
        return cls(lr=lr, mode=mode, m=np.zeros(n), v=np.zeros(n), **kw)


def adam_step(state: OptimizerState, params: ModelParams, grads: np.ndarray) -> None:
    """One update; mutates ``params.values`` and ``state`` in place."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.values.shape}")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at {bad.size} entries, first index {bad[0]}")
    if state.m is None:
        state.m = np.zeros_like(params.values)
        state.v = np.zeros_like(params.values)

    state.step += 1
    if state.mode == "sgd":
        params.values -= state.lr * grads
        return
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def ema_update(theta_minus: ModelParams, theta: ModelParams, mu: float) -> ModelParams:
    """Return mu * theta_minus + (1 - mu) * theta as a new parameter set."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1], got {mu}")
    if theta_minus.arch != theta.arch:
        raise ValueError("EMA requires identical architectures")
    if mu == 0.0:
        return theta.copy()
    if mu == 1.0:
        return theta_minus.copy()
    return ModelParams(theta.arch, mu * theta_minus.values + (1.0 - mu) * theta.values)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    tol: float
    numeric: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def finite_diff_check(loss_fn, params: ModelParams, step: float = 1e-4, tol: float = 1e-4,
                      analytic: np.ndarray | None = None, floor: float = 1e-6) -> GradCheckReport:
    """Compare ``analytic`` (or the tape gradient) against central differences.

    Relative error per entry is |a - n| / max(|a|, |n|, floor).
    """
    from .nn import value_and_grad

    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    if analytic is None:
        _, analytic = value_and_grad(loss_fn, params)
    base = np.array(params.values, dtype=np.float64)
    numeric = np.empty_like(base)
    probe = params.with_values(base.copy())
    for i in range(base.size):
        probe.values[i] = base[i] + step
        up = float(loss_fn(probe))
        probe.values[i] = base[i] - step
        down = float(loss_fn(probe))
        probe.values[i] = base[i]
        numeric[i] = (up - down) / (2.0 * step)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    worst = int(np.argmax(rel))
    return GradCheckReport(float(rel[worst]), worst, tol, numeric)
