"""Adam with an exponentially decaying, per-epoch staircase learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 0.01
    decay_rate: float = 0.95
    staircase: bool = True

    def __post_init__(self):
        if not self.initial > 0:
            raise ConfigError(f"initial learning rate must be positive, got {self.initial}")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError(f"decay_rate must lie in (0, 1], got {self.decay_rate}")


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    """Learning rate for ``epoch``; a fractional epoch is floored when ``staircase`` is set."""
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    exponent = int(epoch) if schedule.staircase else epoch
    return schedule.initial * schedule.decay_rate**exponent


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
        )


class Adam:
    """Bias-corrected Adam. Every parameter, wavelet angle or dense weight, takes the same path."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(
        self,
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        state: AdamState,
        lr: float,
    ) -> None:
        """Update ``params`` and ``state`` in place."""
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if set(grads) != set(params) or set(state.m) != set(params):
            raise ConfigError("parameter, gradient and optimizer-state names differ")
        for name, p in params.items():
            if grads[name].shape != p.shape or state.m[name].shape != p.shape:
                raise ConfigError(
                    f"{name}: parameter {p.shape}, gradient {grads[name].shape}, "
                    f"moment {state.m[name].shape}"
                )

        state.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**state.t
        c2 = 1.0 - b2**state.t
        for name in params:
            g = grads[name]
            m, v = state.m[name], state.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    Adam().step(params, grads, state, lr)
