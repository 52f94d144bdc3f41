"""Shared discretization of SE(3): rotation bins, translation grids, distance table.

Rotation bins are an almost-uniform, fully deterministic sample of SO(3)
built on the Hopf fibration: a spherical Fibonacci point set on S^2 picks
the direction of the rotated Z axis, and a uniform grid on the S^1 fiber
(golden-ratio phase-shifted per sphere point to avoid alignment artifacts)
picks the twist about it. The fiber count is chosen so the two factors have
matching resolution and the product is at least n; enumeration is
fiber-ring-major and truncated to exactly n, so the same n always yields
bit-identical centers.

Translation is gridded per axis into equal-width bins; out-of-range values
belong to the nearest edge bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import InvalidRange
from .geometry import Rotation

_GOLDEN_FRAC = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class RotationBins:
    """An ordered set of n rotation bin centers."""

    quats: np.ndarray = field(repr=False)  # (n, 4) canonical unit quaternions
    centers: tuple[Rotation, ...] = field(repr=False)

    def __init__(self, quats) -> None:
        quats = np.asarray(quats, dtype=np.float64)
        if quats.ndim != 2 or quats.shape[1] != 4 or quats.shape[0] < 1:
            raise ValueError(f"expected (n, 4) quaternion array, got {quats.shape}")
        centers = tuple(Rotation(q) for q in quats)
        quats = np.stack([r.q for r in centers])
        g = np.abs(quats @ quats.T)
        np.fill_diagonal(g, 0.0)
        if g.max() >= 1.0 - 1e-12:
            raise ValueError("rotation bin centers must be distinct")
        object.__setattr__(self, "quats", quats)
        object.__setattr__(self, "centers", centers)

    @property
    def n(self) -> int:
        return self.quats.shape[0]

    def nearest_index(self, r: Rotation) -> int:
        """Index of the geodesically nearest bin (ties to the lower index)."""
        return int(np.argmax(np.abs(self.quats @ r.q)))

    def nearest_index_many(self, quats: np.ndarray) -> np.ndarray:
        """Vectorized nearest_index for a (p, 4) quaternion array."""
        return np.argmax(np.abs(np.asarray(quats) @ self.quats.T), axis=1)

    def __repr__(self) -> str:
        return f"RotationBins(n={self.n})"


def sample_so3_uniform(n: int) -> RotationBins:
    """Deterministic, almost-uniform sample of n rotations on SO(3)."""
    if n < 1:
        raise ValueError("need at least one rotation bin")
    n_fiber = max(1, round((math.pi * n) ** (1.0 / 3.0)))
    n_sphere = math.ceil(n / n_fiber)

    s = np.arange(n_sphere)
    z = 1.0 - (2.0 * s + 1.0) / n_sphere
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = 2.0 * math.pi * ((s * _GOLDEN_FRAC) % 1.0)
    phase = (s * _GOLDEN_FRAC) % 1.0

    # fiber-ring-major enumeration so truncation thins evenly over the sphere
    idx = np.arange(n_sphere * n_fiber)
    fs = idx // n_sphere
    ss = idx % n_sphere
    psi = 2.0 * math.pi * (fs + phase[ss]) / n_fiber

    half_theta = 0.5 * theta[ss]
    half_psi = 0.5 * psi
    quats = np.stack([
        np.cos(half_theta) * np.cos(half_psi),
        np.cos(half_theta) * np.sin(half_psi),
        np.sin(half_theta) * np.cos(phi[ss] + half_psi),
        np.sin(half_theta) * np.sin(phi[ss] + half_psi),
    ], axis=1)
    return RotationBins(quats[:n])


def nn_rotations(r: Rotation, bins: RotationBins, k: int) -> list[int]:
    """Indices of the k nearest bins by geodesic distance, nearest first.

    Exact: a full scan over bin centers (distance is monotone in the
    absolute quaternion dot product). Ties break toward the lower index.
    """
    if not 1 <= k <= bins.n:
        raise ValueError(f"k must be in [1, {bins.n}], got {k}")
    dots = np.abs(bins.quats @ r.q)
    return list(np.argsort(-dots, kind="stable")[:k])


@dataclass(frozen=True)
class AxisGrid:
    """m equal-width bins covering [s_min, s_max] on one translation axis."""

    m: int
    s_min: float
    s_max: float
    centers: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise InvalidRange(f"bin count must be >= 1, got {self.m}")
        if not self.s_max > self.s_min:
            raise InvalidRange(f"empty grid range [{self.s_min}, {self.s_max}]")
        # convex-combination form keeps mirrored grids exactly mirrored in fp,
        # so equidistant ties resolve by the stated lower-index rule
        i = np.arange(self.m)
        centers = ((2.0 * (self.m - i) - 1.0) * self.s_min
                   + (2.0 * i + 1.0) * self.s_max) / (2.0 * self.m)
        object.__setattr__(self, "centers", centers)

    @property
    def width(self) -> float:
        return (self.s_max - self.s_min) / self.m


def make_axis_grid(m: int, s_min: float, s_max: float) -> AxisGrid:
    return AxisGrid(m=m, s_min=float(s_min), s_max=float(s_max))


def nn_axis(x: float, grid: AxisGrid, k: int) -> list[int]:
    """Indices of the k nearest grid bins by |x - center|, nearest first.

    Out-of-range x naturally resolves to the edge bin first; exact ties
    break toward the lower index.
    """
    if not 1 <= k <= grid.m:
        raise ValueError(f"k must be in [1, {grid.m}], got {k}")
    d = np.abs(x - grid.centers)
    return list(np.argsort(d, kind="stable")[:k])


@dataclass(frozen=True)
class RotDistanceTable:
    """Precomputed model-aware rotation distance for every bin pair (meters)."""

    n: int
    entries: np.ndarray = field(repr=False)
    model_name: str = "model"
    model_hash: str = ""

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (self.n, self.n):
            raise ValueError(f"expected ({self.n}, {self.n}) entries, got {entries.shape}")
        object.__setattr__(self, "entries", entries)

    def __repr__(self) -> str:
        return f"RotDistanceTable(n={self.n}, model={self.model_name!r})"


def precompute_table(bins: RotationBins, model: "metrics.ObjectModel") -> RotDistanceTable:
    """Tabulate the rotation term of the decoupled distance for all bin pairs.

    Stores the symmetrized value (D_ij + D_ji) / 2; the raw closest-point
    term is direction-dependent for asymmetric point sets, but voting treats
    hypothesis pairs symmetrically.
    """
    raw = metrics.rotation_distance_matrix(bins.quats, model)
    sym = 0.5 * (raw + raw.T)
    return RotDistanceTable(
        n=bins.n, entries=sym, model_name=model.name, model_hash=model.content_hash()
    )
