"""Bias-corrected Adam over a named parameter list, updating in place."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError


class Adam:
    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = {key: np.zeros_like(value) for key, value in self.params}
        self.v = {key: np.zeros_like(value) for key, value in self.params}

    def step(self, grads):
        """One Adam update; ``grads`` maps parameter keys to gradient arrays."""
        for key, _ in self.params:
            if key not in grads:
                raise KeyError(f"missing gradient for parameter {key!r}")
            if not np.all(np.isfinite(grads[key])):
                raise NonFiniteError(f"non-finite gradient for parameter {key!r}")
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for key, value in self.params:
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
