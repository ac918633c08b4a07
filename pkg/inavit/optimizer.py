#!/usr/bin/env python3
"""
AdamW with decoupled weight decay.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class OptimizerConfig:
    """Hyperparameters of AdamW. Default lr is 1e-4."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be nonnegative")

    def to_dict(self) -> dict:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, data: Mapping) -> "OptimizerConfig":
        return cls(**dict(data))


@dataclass
class OptimizerState:
    """
    Per-parameter first/second moments plus the step counter.

    Attributes:
        config (OptimizerConfig): Hyperparameters.
        first (dict): Name to first-moment accumulator.
        second (dict): Name to second-moment accumulator.
        step (int): Number of updates applied so far.
    """

    config: OptimizerConfig
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], config: OptimizerConfig) -> "OptimizerState":
        return cls(
            config,
            {n: np.zeros_like(p) for n, p in params.items()},
            {n: np.zeros_like(p) for n, p in params.items()},
        )


class AdamW:
    """
    Stateless AdamW update rule.
    """

    @staticmethod
    def step(
        params: Mapping[str, np.ndarray],
        grads: Mapping[str, np.ndarray],
        state: OptimizerState,
    ) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
        """
        Apply one AdamW update.

        Weight decay is applied to the parameter (θ ← θ − lr·wd·θ), not folded
        into the gradient; moments are bias-corrected.

        Args:
            params (dict): Name to current parameter array.
            grads (dict): Name to gradient array (same shapes).
            state (OptimizerState): Moments and step counter.

        Returns:
            tuple: (new parameter arrays, new state). Inputs are not modified.

        Raises:
            ShapeError: If a gradient or moment shape differs from its parameter.
        """
        cfg = state.config
        step = state.step + 1
        correction1 = 1.0 - cfg.beta1 ** step
        correction2 = 1.0 - cfg.beta2 ** step
        new_params, first, second = {}, {}, {}
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                grad = np.zeros_like(param)
            m = state.first.get(name, np.zeros_like(param))
            v = state.second.get(name, np.zeros_like(param))
            if grad.shape != param.shape or m.shape != param.shape or v.shape != param.shape:
                raise ShapeError(
                    f"optimizer shape mismatch for '{name}': param {param.shape}, "
                    f"grad {grad.shape}, moments {m.shape}/{v.shape}"
                )
            grad = grad.astype(param.dtype, copy=False)
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            decayed = param * (1.0 - cfg.lr * cfg.weight_decay)
            new_params[name] = (decayed - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(param.dtype)
            first[name] = m.astype(param.dtype)
            second[name] = v.astype(param.dtype)
        return new_params, OptimizerState(cfg, first, second, step)


adamw_step = AdamW.step
