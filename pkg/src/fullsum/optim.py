"""Adam with Nesterov momentum and the one-cycle learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class NadamOptimizer:
    """Adam with a Nesterov-style momentum lookahead.

    Keras-variant update (no extra momentum schedule), per parameter:

        m_t = b1 * m_{t-1} + (1 - b1) * g
        v_t = b2 * v_{t-1} + (1 - b2) * g^2
        m_hat = m_t / (1 - b1^t)
        v_hat = v_t / (1 - b2^t)
        m_bar = b1 * m_hat + (1 - b1) * g / (1 - b1^t)
        theta <- theta - lr * m_bar / (sqrt(v_hat) + eps)

    The lookahead term ``m_bar`` mixes the bias-corrected momentum with the
    current gradient, which is what distinguishes this from plain Adam.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: list[np.ndarray] = field(default_factory=list)
    _v: list[np.ndarray] = field(default_factory=list)

    def _ensure_state(self, params: list[np.ndarray]) -> None:
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(self._m) != len(params):
            raise ValueError("parameter list changed size between steps")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        """Update ``params`` in place from matching ``grads``."""
        self._ensure_state(params)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_bar = (self.beta1 * m + (1.0 - self.beta1) * g) / bc1
            p -= lr * m_bar / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class OneCycleSchedule:
    """Piecewise-linear single cycle: min -> max -> min, then flat.

    The cycle spans ``cycle_fraction`` of ``total_steps`` with its peak at
    the cycle midpoint; afterwards the rate stays at ``lr_min``.
    """

    total_steps: int
    lr_min: float = 1.2e-5
    lr_max: float = 3.0e-4
    cycle_fraction: float = 0.8

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0.0 < self.cycle_fraction <= 1.0:
            raise ValueError("cycle_fraction must be in (0, 1]")
        if self.lr_min <= 0 or self.lr_max < self.lr_min:
            raise ValueError("need 0 < lr_min <= lr_max")

    def lr(self, step: int) -> float:
        """Learning rate for 0-based ``step``."""
        cycle_steps = self.cycle_fraction * self.total_steps
        half = cycle_steps / 2.0
        if step >= cycle_steps or half == 0:
            return self.lr_min
        if step <= half:
            frac = step / half
        else:
            frac = (cycle_steps - step) / half
        return self.lr_min + frac * (self.lr_max - self.lr_min)
