"""Symmetry-robust hypothesis distances over a point-set object model, and mPCK.

The core discrepancy between two pose hypotheses h1, h2 is the mean
closest-point distance between the model transformed by each:

    D(h1, h2) = mean over x1 in M of  min over x2 in M  |h1(x1) - h2(x2)|

It is small whenever the two poses produce similar 3-D occupancies, even if
their rotations are far apart on SO(3) -- which is what makes it robust to
object symmetry. A decoupled variant upper-bounds it by splitting off the
translation:

    D~(h1, h2) = |T1 - T2| + mean_x1 min_x2 |R1 x1 - R2 x2|

and the rotation term of D~ can be precomputed for all pairs of rotation
bins (see tessellation.precompute_table), giving the fast approximate
distance used in voting.

Closest-point queries are exact everywhere: a vectorized scan for small
models, a k-d tree for large ones. POSEFUSE_THREADS caps tree-query
parallelism (0 or unset = all cores).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, TableMismatch
from .geometry import Pose, Rotation

if TYPE_CHECKING:
    from .tessellation import RotationBins, RotDistanceTable

# Below this size a vectorized linear scan beats the tree; both are exact.
_BRUTE_FORCE_CUTOFF = 2048


def worker_count() -> int:
    """Thread cap for tree queries from POSEFUSE_THREADS (0/unset = auto)."""
    raw = os.environ.get("POSEFUSE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        return -1
    return n if n > 0 else -1


class ObjectModel:
    """An object as m 3-D model points plus an exact closest-point index."""

    def __init__(self, points, name: str = "model") -> None:
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
            raise ValueError(f"model points must be a non-empty (m, 3) array, got {points.shape}")
        if not np.isfinite(points).all():
            raise ValueError("model points must be finite")
        self.points = points
        self.name = name
        self.index = cKDTree(points)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def nn_distances(self, queries: np.ndarray) -> np.ndarray:
        """Exact distance from each query point to its nearest model point."""
        queries = np.asarray(queries, dtype=np.float64)
        if self.m > _BRUTE_FORCE_CUTOFF:
            d, _ = self.index.query(queries, workers=worker_count())
            return d
        return _scan_nn(queries, self.points)

    def content_hash(self) -> str:
        """SHA-256 over the point coordinates; binds tables to this model."""
        h = hashlib.sha256()
        h.update(b"xyz %d\n" % self.m)
        h.update(self.points.tobytes())
        return h.hexdigest()

    def __repr__(self) -> str:
        return f"ObjectModel(name={self.name!r}, m={self.m})"


def _scan_nn(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Exact NN distances by a chunked vectorized scan.

    Fast path is the Gram expansion |q-p|^2 = |q|^2 - 2qp + |p|^2, whose
    cancellation noise only matters within ~1e-8 of zero; any query that
    lands there is re-resolved with the exact difference form, so true zero
    distances come out exactly zero.
    """
    single = queries.ndim == 1
    q = np.ascontiguousarray(queries.reshape(-1, 3))
    m = points.shape[0]
    pn = np.einsum("ij,ij->i", points, points)
    scaled = -2.0 * points.T
    out = np.empty(q.shape[0])
    chunk = max(1, 2_000_000 // m)
    for lo in range(0, q.shape[0], chunk):
        hi = min(lo + chunk, q.shape[0])
        g = q[lo:hi] @ scaled
        g += pn
        d2 = g.min(axis=1)
        d2 += np.einsum("ij,ij->i", q[lo:hi], q[lo:hi])
        np.maximum(d2, 0.0, out=d2)
        out[lo:hi] = d2
    np.sqrt(out, out=out)
    near = np.flatnonzero(out < 1e-8)
    for i in near:
        out[i] = np.sqrt(((points - q[i]) ** 2).sum(axis=1).min())
    return out[0] if single else out


def _same_pose(h1: Pose, h2: Pose) -> bool:
    return h1 is h2 or (np.array_equal(h1.r.q, h2.r.q) and np.array_equal(h1.t, h2.t))


def add_s(h1: Pose, h2: Pose, model: ObjectModel) -> float:
    """Mean closest-point discrepancy D(h1, h2). Not symmetric in general."""
    if _same_pose(h1, h2):
        return 0.0
    rel = h2.inverse() @ h1
    return float(model.nn_distances(rel.apply(model.points)).mean())


def add_s_many(poses: Sequence[Pose], ref: Pose, model: ObjectModel) -> np.ndarray:
    """add_s(p, ref, model) for each pose p, batched into one index pass."""
    if len(poses) == 0:
        return np.empty(0)
    ref_inv = ref.inverse()
    m = model.m
    queries = np.empty((len(poses) * m, 3))
    for i, p in enumerate(poses):
        queries[i * m:(i + 1) * m] = (ref_inv @ p).apply(model.points)
    d = model.nn_distances(queries)
    return d.reshape(len(poses), m).mean(axis=1)


def sym_add_s(h1: Pose, h2: Pose, model: ObjectModel) -> float:
    """Symmetrized discrepancy: (D(h1,h2) + D(h2,h1)) / 2."""
    return 0.5 * (add_s(h1, h2, model) + add_s(h2, h1, model))


def rotation_distance(r1: Rotation, r2: Rotation, model: ObjectModel) -> float:
    """Rotation-only mean closest-point distance (the D~ rotation term)."""
    if np.array_equal(r1.q, r2.q):
        return 0.0
    rel = r2.inverse() @ r1
    return float(model.nn_distances(rel.apply(model.points)).mean())


def exact_decoupled_distance(h1: Pose, h2: Pose, model: ObjectModel) -> float:
    """Decoupled upper bound D~(h1, h2) = |T1 - T2| + rotation term."""
    return float(np.linalg.norm(h1.t - h2.t)) + rotation_distance(h1.r, h2.r, model)


def approx_distance(h1: Pose, h2: Pose, table: "RotDistanceTable", bins: "RotationBins") -> float:
    """D~ with the rotation term looked up in a precomputed bin-pair table."""
    if table.n != bins.n:
        raise TableMismatch(f"table has {table.n} bins but bin set has {bins.n}")
    i = bins.nearest_index(h1.r)
    j = bins.nearest_index(h2.r)
    return float(np.linalg.norm(h1.t - h2.t)) + float(table.entries[i, j])


def rotation_distance_matrix(rotations, model: ObjectModel) -> np.ndarray:
    """Raw (asymmetric) rotation-only distance for every ordered rotation pair.

    Entry [i, j] is mean_x1 min_x2 |Ri x1 - Rj x2|. Blocked Gram-matrix
    implementation: each i<=j block is computed once and reduced along both
    axes to serve both directions. The diagonal is exactly zero.
    """
    mats = _rotation_matrices(rotations)
    n = mats.shape[0]
    pts = model.points
    m = pts.shape[0]
    sets = np.einsum("nij,mj->nmi", mats, pts)  # (n, m, 3) rotated copies
    flat = sets.reshape(n * m, 3)
    norms = np.einsum("ij,ij->i", flat, flat)
    # |a-b|^2 = -2ab + |b|^2 + |a|^2; fold the first two terms into a single
    # matmul through an augmented fourth coordinate (two variants, one per
    # reduction direction)
    aug_one = np.empty((n * m, 4))
    aug_one[:, :3] = -2.0 * flat
    aug_one[:, 3] = 1.0
    aug_norm = np.empty((n * m, 4))
    aug_norm[:, :3] = aug_one[:, :3]
    aug_norm[:, 3] = norms

    out = np.zeros((n, n))
    # chunk so the Gram workspace stays cache-resident (~3 MB)
    max_sets = max(1, 400_000 // (m * m))
    g1 = np.empty((max_sets * m, m))
    g2_flat = np.empty(m * max_sets * m)
    for j in range(n):
        b1 = np.empty((4, m))
        b1[:3] = sets[j].T
        b1[3] = norms[j * m:(j + 1) * m]
        a2 = np.empty((m, 4))
        a2[:, :3] = sets[j]
        a2[:, 3] = 1.0
        nj = norms[j * m:(j + 1) * m]
        for i0 in range(0, j + 1, max_sets):
            i1 = min(i0 + max_sets, j + 1)
            rows = (i1 - i0) * m
            bn = norms[i0 * m:i1 * m]
            # direction i -> j: per point of set i, min over set j (last axis)
            np.dot(aug_one[i0 * m:i1 * m], b1, out=g1[:rows])
            d2 = g1[:rows].min(axis=1)
            d2 += bn
            np.maximum(d2, 0.0, out=d2)
            np.sqrt(d2, out=d2)
            out[i0:i1, j] = d2.reshape(i1 - i0, m).mean(axis=1)
            # direction j -> i: per point of set j, min over each set i
            g2 = g2_flat[:m * rows].reshape(m, rows)
            np.dot(a2, aug_norm[i0 * m:i1 * m].T, out=g2)
            d2 = g2.reshape(m, i1 - i0, m).min(axis=2)
            d2 += nj[:, None]
            np.maximum(d2, 0.0, out=d2)
            np.sqrt(d2, out=d2)
            out[j, i0:i1] = d2.mean(axis=0)
    np.fill_diagonal(out, 0.0)
    return out


def _rotation_matrices(rotations) -> np.ndarray:
    if isinstance(rotations, np.ndarray) and rotations.ndim == 2 and rotations.shape[1] == 4:
        quats = rotations
    else:
        quats = np.stack([r.q for r in rotations])
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    mats = np.empty((quats.shape[0], 3, 3))
    mats[:, 0, 0] = 1 - 2 * (y * y + z * z)
    mats[:, 0, 1] = 2 * (x * y - w * z)
    mats[:, 0, 2] = 2 * (x * z + w * y)
    mats[:, 1, 0] = 2 * (x * y + w * z)
    mats[:, 1, 1] = 1 - 2 * (x * x + z * z)
    mats[:, 1, 2] = 2 * (y * z - w * x)
    mats[:, 2, 0] = 2 * (x * z - w * y)
    mats[:, 2, 1] = 2 * (y * z + w * x)
    mats[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return mats


@dataclass(frozen=True)
class PckCurve:
    """Accuracy-vs-threshold summary of a batch of pose distances.

    mpck is the area under the accuracy curve over thresholds [0, tau_max],
    normalized to [0, 1]; in closed form it is mean(max(0, 1 - D/tau_max)).
    """

    tau_max: float
    samples: np.ndarray = field(repr=False)
    mpck: float = 0.0

    def accuracy_at(self, threshold: float) -> float:
        return float(np.mean(self.samples <= threshold))

    def curve(self, resolution: int = 100) -> tuple[np.ndarray, np.ndarray]:
        """(thresholds, accuracies) sampled uniformly on [0, tau_max]."""
        taus = np.linspace(0.0, self.tau_max, resolution)
        acc = (self.samples[None, :] <= taus[:, None]).mean(axis=1)
        return taus, acc

    def to_csv(self, path, resolution: int = 100) -> None:
        taus, acc = self.curve(resolution)
        with open(path, "w") as f:
            f.write("threshold,accuracy\n")
            for t, a in zip(taus, acc):
                f.write(f"{float(t)!r},{float(a)!r}\n")

    def summary(self) -> dict:
        return {"mpck": self.mpck, "tau_max": self.tau_max, "n": int(self.samples.size)}


def mpck(distances, tau_max: float) -> PckCurve:
    """PckCurve for a batch of distances; raises EmptyInput on no samples."""
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size == 0:
        raise EmptyInput("mpck needs at least one distance sample")
    if tau_max <= 0.0:
        raise ValueError("tau_max must be positive")
    value = float(np.mean(np.clip(1.0 - d / tau_max, 0.0, None)))
    return PckCurve(tau_max=tau_max, samples=np.sort(d), mpck=value)
