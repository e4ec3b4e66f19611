"""The conditional 8-mode circle mixture used for pretraining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rewards import N_MODES, mode_centers


@dataclass(frozen=True)
class MixtureTask:
    n_modes: int = N_MODES
    radius: float = 1.0
    mode_std: float = 0.05

    @property
    def centers(self) -> np.ndarray:
        return mode_centers(self.n_modes, self.radius)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """n points with uniformly drawn mode labels."""
        cond = rng.integers(0, self.n_modes, size=n)
        x = self.centers[cond] + self.mode_std * rng.standard_normal((n, 2))
        return x, cond

    def balanced(self, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """n points with labels cycling 0..K-1 (held-out evaluation data)."""
        rng = np.random.default_rng([int(seed), 7919])
        cond = np.arange(n) % self.n_modes
        x = self.centers[cond] + self.mode_std * rng.standard_normal((n, 2))
        return x, cond
