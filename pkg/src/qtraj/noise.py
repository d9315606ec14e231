"""Replayable Wiener increments shared between coupled trajectories."""

from __future__ import annotations

import numpy as np

GENERATOR_ID = "numpy.PCG64"


class NoiseStream:
    """Seeded source of (dW, dZ) pairs for a fixed step ``dt``.

    ``dZ`` is the area integral of W over the step, drawn jointly with ``dW``
    (Var dZ = dt^3/3, Cov(dW, dZ) = dt^2/2).  Two streams with equal seed and
    cursor produce identical increments; :meth:`fork` gives such a copy.
    """

    generator_id = GENERATOR_ID

    def __init__(self, seed: int, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.dt = float(dt)
        self.cursor = 0
        self._bitgen = np.random.PCG64(self.seed)

    def draw(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        u = np.random.Generator(self._bitgen).standard_normal((n, 2))
        self.cursor += n
        h = self.dt
        dW = u[:, 0] * np.sqrt(h)
        dZ = 0.5 * h**1.5 * (u[:, 0] + u[:, 1] / np.sqrt(3.0))
        return dW, dZ

    def fork(self) -> "NoiseStream":
        other = NoiseStream.__new__(NoiseStream)
        other.seed, other.dt, other.cursor = self.seed, self.dt, self.cursor
        other._bitgen = np.random.PCG64()
        other._bitgen.state = self._bitgen.state
        return other

    def describe(self) -> dict:
        return {"seed": self.seed, "generator": self.generator_id, "dt": self.dt, "cursor": self.cursor}


def spawn_seeds(master: int, n: int) -> list[int]:
    """Independent 64-bit child seeds from a master seed (SeedSequence.spawn)."""
    children = np.random.SeedSequence(int(master)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
