"""Adam optimizer for array-valued parameters.

Reference hyperparameters used by every design loop in this package:
lr = 5e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState"]


@dataclass
class AdamState:
    step_size: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    iteration: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One bias-corrected Adam update; returns the new parameter array."""
        if self.first_moment is None:
            self.first_moment = np.zeros_like(params)
            self.second_moment = np.zeros_like(params)
        self.iteration += 1
        b1, b2 = self.beta1, self.beta2
        self.first_moment = b1 * self.first_moment + (1.0 - b1) * grad
        self.second_moment = b2 * self.second_moment + (1.0 - b2) * grad * grad
        m_hat = self.first_moment / (1.0 - b1**self.iteration)
        v_hat = self.second_moment / (1.0 - b2**self.iteration)
        return params - self.step_size * m_hat / (np.sqrt(v_hat) + self.epsilon)
