"""Seeded, truncated Brownian driving paths stored as increments."""
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True, eq=False)
class SamplePath:
    seed: int
    J: int
    dt: float
    increments: np.ndarray  # (steps, J)
    antithetic: bool = False

    @property
    def steps(self):
        return self.increments.shape[0]

    @property
    def T(self):
        return self.dt * self.steps

    def values(self):
        """Path values ``B_{t_k}``, shape (steps + 1, J), starting at 0."""
        out = np.zeros((self.steps + 1, self.J))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def coarsen(self, factor):
        """Same Brownian path observed on a lattice ``factor`` times coarser."""
        factor = int(factor)
        if factor < 1 or self.steps % factor:
            raise ValueError(f"cannot coarsen {self.steps} steps by {factor}")
        inc = self.increments.reshape(self.steps // factor, factor, self.J).sum(axis=1)
        return replace(self, dt=self.dt * factor, increments=inc)


def sample_path(seed, J, dt, steps):
    """Draw ``steps x J`` i.i.d. N(0, dt) increments from a PCG64 stream."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if J < 0:
        raise ValueError(f"J must be nonnegative, got {J}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    inc = rng.standard_normal((int(steps), int(J))) * np.sqrt(dt)
    return SamplePath(seed=int(seed), J=int(J), dt=float(dt), increments=inc)


def antithetic(path):
    return replace(path, increments=-path.increments, antithetic=not path.antithetic)


def refinement_family(seed, J, dt_fine, steps_fine, levels):
    """One Brownian path observed at ``levels`` dyadic resolutions, coarsest first."""
    fine = sample_path(seed, J, dt_fine, steps_fine)
    return [fine.coarsen(2 ** (levels - 1 - i)) for i in range(levels)]
