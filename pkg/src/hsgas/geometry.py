"""Configuration domain, exclusion theta functions, and admissible sampling.

The domain is the axis-aligned cube [0, box]^3. Exclusion uses the strong
theta convention: theta(x) = 1 for x > 0 and 0 for x <= 0, so grazing contact
(pair distance exactly sigma, or wall clearance exactly sigma/2) is
inadmissible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng


@dataclass(frozen=True)
class HardSphereModel:
    """Hard-sphere system: particle count, diameter, cube edge.

    epsilon = 1/n is the small parameter of the dilute-limit experiments.
    """

    n: int
    sigma: float
    box: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 particles, got n={self.n}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not self.sigma < self.box / 2:
            raise ValueError(
                f"sigma={self.sigma} must be < box/2={self.box / 2} "
                "(no admissible position would exist)"
            )

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    @property
    def volume(self) -> float:
        return self.box ** 3

    @property
    def wall_box(self) -> tuple[float, float]:
        """Interval [sigma/2, box - sigma/2] of admissible center coordinates."""
        return (self.sigma / 2.0, self.box - self.sigma / 2.0)

    @property
    def wall_volume(self) -> float:
        """Volume (box - sigma)^3 accessible to a single center."""
        return (self.box - self.sigma) ** 3


@dataclass(frozen=True)
class PhasePoint:
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass
class NBodyConfig:
    """Positions (n,3) and velocities (n,3) of the full system."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have matching shapes")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def points(self):
        return [PhasePoint(r, v) for r, v in zip(self.positions, self.velocities)]

    def copy(self) -> "NBodyConfig":
        return NBodyConfig(self.positions.copy(), self.velocities.copy())


@dataclass(frozen=True)
class ContactGeometry:
    """Unit normals and relative velocity of a touching pair.

    n12 points from particle 2 toward particle 1; the second particle sits at
    contact_point = r1 + sigma * n21.
    """

    n12: np.ndarray
    v12: np.ndarray
    contact_point: np.ndarray

    @property
    def n21(self) -> np.ndarray:
        return -self.n12

    @classmethod
    def at_contact(cls, r1, v1, r2, v2, sigma: float) -> "ContactGeometry":
        r1 = np.asarray(r1, float)
        r2 = np.asarray(r2, float)
        n12 = (r1 - r2) / sigma
        return cls(n12=n12, v12=np.asarray(v1, float) - np.asarray(v2, float),
                   contact_point=r2)


def wall_theta(r, model: HardSphereModel):
    """1 iff every face of the cube is strictly farther than sigma/2.

    Accepts a single position or an array of shape (..., 3); returns an int
    array of matching leading shape (or a scalar int).
    """
    r = np.asarray(r, dtype=float)
    half = model.sigma / 2.0
    near = np.minimum(r, model.box - r).min(axis=-1)
    out = (near > half).astype(int)
    return out if out.ndim else int(out)


def pair_theta(r_i, r_j, sigma: float):
    """1 iff |r_i - r_j| > sigma (strict)."""
    r_i = np.asarray(r_i, dtype=float)
    r_j = np.asarray(r_j, dtype=float)
    d2 = ((r_i - r_j) ** 2).sum(axis=-1)
    out = (d2 > sigma * sigma).astype(int)
    return out if out.ndim else int(out)


def per_particle_theta(positions, model: HardSphereModel) -> np.ndarray:
    """Per-particle factors: wall clearance times pair thetas against j < i.

    The product over i of these factors equals ensemble_theta; the split is
    exposed so tests can assert the factorization identity.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    n = pos.shape[0]
    fac = np.asarray(wall_theta(pos, model), dtype=int)
    if fac.ndim == 0:
        fac = fac[None]
    fac = fac.copy()
    for i in range(1, n):
        d2 = ((pos[i] - pos[:i]) ** 2).sum(axis=-1)
        if not np.all(d2 > model.sigma ** 2):
            fac[i] = 0
    return fac


def ensemble_theta(config, model: HardSphereModel) -> int:
    """1 iff no wall overlap and no pair overlap anywhere in the configuration."""
    pos = config.positions if isinstance(config, NBodyConfig) else np.atleast_2d(config)
    if not np.all(wall_theta(pos, model)):
        return 0
    n = pos.shape[0]
    if n > 1 and model.sigma > 0:
        diff = pos[:, None, :] - pos[None, :, :]
        d2 = (diff ** 2).sum(axis=-1)
        iu = np.triu_indices(n, k=1)
        if not np.all(d2[iu] > model.sigma ** 2):
            return 0
    return 1


def maxwell_velocities(n: int, v_th: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(scale=v_th, size=(n, 3))


def uniform_admissible_sample(
    model: HardSphereModel,
    seed: int,
    velocity_sampler=None,
    v_th: float = 1.0,
    max_tries: int = 200_000,
) -> NBodyConfig:
    """Exact uniform sample on the admissible position set, Maxwell velocities.

    Proposes each center uniform on the wall-admissible box (the admissible
    set is a subset of it, so restriction keeps the sample exactly uniform)
    and rejects whole configurations with any pair overlap.
    """
    rng = derive_rng(seed, "geometry", "uniform_admissible_sample")
    lo, hi = model.wall_box
    sig2 = model.sigma ** 2
    for attempt in range(1, max_tries + 1):
        pos = rng.uniform(lo, hi, size=(model.n, 3))
        if model.sigma > 0 and model.n > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            d2 = (diff ** 2).sum(axis=-1)
            iu = np.triu_indices(model.n, k=1)
            if not np.all(d2[iu] > sig2):
                # acceptance-rate diagnostic: bail out well before the heat death
                if attempt >= 1_000_000 or (attempt >= max_tries):
                    break
                continue
        if velocity_sampler is not None:
            vel = velocity_sampler(rng)
        else:
            vel = maxwell_velocities(model.n, v_th, rng)
        return NBodyConfig(pos, vel)
    raise RuntimeError(
        f"rejection sampling failed after {max_tries} proposals "
        f"(n={model.n}, sigma={model.sigma}); packing too dense for naive rejection"
    )
