"""Bin & delta pose codec: sparse confidence targets, decoding, top-K expansion.

A pose is encoded against a shared tessellation as, per subspace (SO(3) and
the three translation axes), a confidence vector that is theta1 on the
nearest bin, theta2 on the remaining k-nearest bins and zero elsewhere,
plus per-bin deltas that correct each of those bins to the exact value.

Rotation deltas multiply from the left (d_i composed with the bin center
reconstructs the pose: R = d_i * Rhat_i), so an error delta on the
prediction passes through to the decoded rotation unamplified. Translation
deltas are unbounded signed offsets from the bin center, which lets
out-of-range values clamp to an edge bin and still round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import NamedTuple

import numpy as np

from .errors import EmptyCode
from .geometry import Pose, Rotation
from .tessellation import AxisGrid, RotationBins, nn_axis, nn_rotations


@dataclass(frozen=True)
class CodecConfig:
    """Tessellation plus the soft-binning constants shared by all classes."""

    bins: RotationBins
    grid_x: AxisGrid
    grid_y: AxisGrid
    grid_z: AxisGrid
    k_rot: int = 4
    k_axis: int = 3
    theta1: float = 0.7
    theta2: float = 0.1

    def __post_init__(self) -> None:
        if not (self.theta1 > self.theta2 > 0.0):
            raise ValueError("need theta1 > theta2 > 0")
        if not 1 <= self.k_rot <= self.bins.n:
            raise ValueError(f"k_rot must be in [1, {self.bins.n}]")
        for g in self.grids:
            if not 1 <= self.k_axis <= g.m:
                raise ValueError(f"k_axis must be in [1, {g.m}]")

    @property
    def grids(self) -> tuple[AxisGrid, AxisGrid, AxisGrid]:
        return (self.grid_x, self.grid_y, self.grid_z)


@dataclass
class BinDeltaCode:
    """Sparse confidence vectors and deltas for one pose.

    d_rot rows are (w, x, y, z) delta quaternions; rows outside the encoded
    neighbor set are all-zero, mirroring the zero targets of the confidence
    scheme. Translation deltas are meters.
    """

    b_rot: np.ndarray
    d_rot: np.ndarray = field(repr=False)
    b_tx: np.ndarray
    d_tx: np.ndarray
    b_ty: np.ndarray
    d_ty: np.ndarray
    b_tz: np.ndarray
    d_tz: np.ndarray

    def axis_arrays(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        return ((self.b_tx, self.d_tx), (self.b_ty, self.d_ty), (self.b_tz, self.d_tz))


def encode_rotation(r: Rotation, cfg: CodecConfig) -> tuple[np.ndarray, np.ndarray]:
    """Confidence vector and per-bin delta quaternions for a rotation."""
    n = cfg.bins.n
    b = np.zeros(n)
    d = np.zeros((n, 4))
    neighbors = nn_rotations(r, cfg.bins, cfg.k_rot)
    b[neighbors[0]] = cfg.theta1
    for i in neighbors[1:]:
        b[i] = cfg.theta2
    for i in neighbors:
        d[i] = (r @ cfg.bins.centers[i].inverse()).q
    return b, d


def encode_translation(t, cfg: CodecConfig) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Per-axis (confidence, delta) arrays; out-of-range values clamp to the
    edge bin and keep the full signed offset as their delta."""
    t = np.asarray(t, dtype=np.float64)
    out = []
    for x, grid in zip(t, cfg.grids):
        b = np.zeros(grid.m)
        d = np.zeros(grid.m)
        neighbors = nn_axis(float(x), grid, cfg.k_axis)
        b[neighbors[0]] = cfg.theta1
        for i in neighbors[1:]:
            b[i] = cfg.theta2
        for i in neighbors:
            d[i] = x - grid.centers[i]
        out.append((b, d))
    return tuple(out)


def encode(p: Pose, cfg: CodecConfig) -> BinDeltaCode:
    """Full bin & delta code for a pose."""
    b_rot, d_rot = encode_rotation(p.r, cfg)
    (bx, dx), (by, dy), (bz, dz) = encode_translation(p.t, cfg)
    return BinDeltaCode(b_rot, d_rot, bx, dx, by, dy, bz, dz)


def _usable(b: np.ndarray) -> np.ndarray:
    """Confidences with NaN treated as undefined; raises if nothing is finite."""
    b = np.asarray(b, dtype=np.float64)
    b = np.where(np.isnan(b), -np.inf, b)
    if not np.isfinite(b).any():
        raise EmptyCode("confidence vector has no finite entry")
    return b


def _delta_rotation(row: np.ndarray) -> Rotation:
    # an all-zero delta row (a bin outside the encoded set) means "no correction"
    if not row.any():
        return Rotation.identity()
    return Rotation(row)


def decode(code: BinDeltaCode, cfg: CodecConfig) -> Pose:
    """Pose from the maximum-confidence bin of each subspace plus its delta.

    Argmax ties resolve to the lower index. Raises EmptyCode if any
    confidence vector is all NaN / -inf.
    """
    jr = int(np.argmax(_usable(code.b_rot)))
    r = _delta_rotation(code.d_rot[jr]) @ cfg.bins.centers[jr]
    t = np.empty(3)
    for a, ((b, d), grid) in enumerate(zip(code.axis_arrays(), cfg.grids)):
        j = int(np.argmax(_usable(b)))
        t[a] = grid.centers[j] + d[j]
    return Pose(r, t)


class ScoredHypothesis(NamedTuple):
    pose: Pose
    ranks: tuple[int, int, int, int]
    score: float


def top_k_hypotheses(code: BinDeltaCode, cfg: CodecConfig, k: int) -> list[ScoredHypothesis]:
    """All compositions of the top-k bins of each subspace, best score first.

    Per subspace the top-k bins by confidence are decoded with their own
    deltas; a hypothesis scores the product of its four confidences. In each
    subspace k is clamped to the number of bins with positive confidence
    (an encoded code supports k_rot rotation and k_axis translation
    candidates), so the hypothesis set for k+1 always contains the set for
    k. Output is sorted by descending score, ties by rank tuple.
    """
    if k < 1:
        raise ValueError("k must be >= 1")

    b = _usable(code.b_rot)
    order = np.argsort(-b, kind="stable")[: min(k, int((b > 0).sum()))]
    if len(order) == 0:
        raise EmptyCode("no positive rotation confidence")
    rot_choices = [
        (_delta_rotation(code.d_rot[i]) @ cfg.bins.centers[i], b[i]) for i in order
    ]

    axis_choices = []
    for (ba, da), grid in zip(code.axis_arrays(), cfg.grids):
        ba = _usable(ba)
        order = np.argsort(-ba, kind="stable")[: min(k, int((ba > 0).sum()))]
        if len(order) == 0:
            raise EmptyCode("no positive translation confidence")
        axis_choices.append([(grid.centers[i] + da[i], ba[i]) for i in order])

    hyps = []
    for (ar, (r, br)), (ax, (x, bx)), (ay, (y, by)), (az, (z, bz)) in product(
        *(enumerate(c) for c in (rot_choices, *axis_choices))
    ):
        hyps.append(ScoredHypothesis(
            pose=Pose(r, (x, y, z)),
            ranks=(ar, ax, ay, az),
            score=br * bx * by * bz,
        ))
    hyps.sort(key=lambda h: (-h.score, h.ranks))
    return hyps
