"""Simulation harness: a configurable noisy predictor standing in for the CNN.

Generates synthetic object models with certified symmetries, places virtual
cameras around a ground-truth pose, emits noisy bin & delta codes per view,
and runs seeded experiments that compare single-view decoding, top-K oracle
accuracy and multi-view fused accuracy on the same trials.

The predictor perturbs each encoded bin's delta independently (a network's
per-bin outputs are independently wrong), optionally swaps the rotation for
a symmetry-equivalent one before encoding (the single-view ambiguity the
voting stage is meant to resolve), and jitters the confidence pattern so
subspace rankings are not frozen. With every noise parameter at zero it
reduces exactly to the clean encoder.

All randomness is derived from integer seeds via numpy Generators; a trial's
streams depend only on (seed, trial, view), so reports are reproducible
bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Union

import numpy as np

from .codec import BinDeltaCode, CodecConfig, decode, encode, top_k_hypotheses
from .errors import InvalidShape
from .geometry import Pose, Rotation
from .metrics import ObjectModel, add_s, add_s_many, mpck
from .multiview import (
    AddSBackend,
    DecoupledBackend,
    TableBackend,
    View,
    ViewSet,
    fuse,
)
from .tessellation import make_axis_grid, nn_axis, nn_rotations, precompute_table, sample_so3_uniform

# multiplicative confidence jitter of the predictor (lognormal sigma)
CONFIDENCE_JITTER = 0.1

# discretization of a continuous symmetry group for confusion sampling
CONTINUOUS_STEPS = 36


@dataclass(frozen=True)
class Box:
    w: float
    h: float
    d: float


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float


@dataclass(frozen=True)
class Blob:
    seed: int = 0


Shape = Union[Box, Cylinder, Blob]


@dataclass(frozen=True)
class SymmetrySpec:
    """Declared symmetry: rotations (right-multiplied) that leave the model
    point set invariant."""

    kind: str = "none"  # none | cyclic | continuous
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    order: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("none", "cyclic", "continuous"):
            raise ValueError(f"unknown symmetry kind {self.kind!r}")
        if self.kind == "cyclic" and (self.order is None or self.order < 2):
            raise ValueError("cyclic symmetry needs order >= 2")

    def elements(self, continuous_steps: int = CONTINUOUS_STEPS) -> list[Rotation]:
        """Group elements (identity first); continuous groups discretized."""
        if self.kind == "none":
            return [Rotation.identity()]
        steps = self.order if self.kind == "cyclic" else continuous_steps
        return [Rotation.from_axis_angle(self.axis, 2.0 * np.pi * j / steps)
                for j in range(steps)]

    def random_element(self, rng: np.random.Generator) -> Rotation:
        """A uniformly random non-identity element (identity if kind none)."""
        if self.kind == "none":
            return Rotation.identity()
        steps = self.order if self.kind == "cyclic" else CONTINUOUS_STEPS
        j = int(rng.integers(1, steps))
        return Rotation.from_axis_angle(self.axis, 2.0 * np.pi * j / steps)


def _signed_permutations(dims: np.ndarray) -> list[np.ndarray]:
    """Proper rotations (signed permutation matrices) preserving a box."""
    from itertools import permutations, product

    out = []
    for perm in permutations(range(3)):
        for signs in product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for i in range(3):
                m[i, perm[i]] = signs[i]
            if np.linalg.det(m) > 0 and all(
                dims[perm[i]] == dims[i] for i in range(3)
            ):
                out.append(m)
    return out


def _box_symmetry(dims: np.ndarray) -> SymmetrySpec:
    w, h, d = dims
    if w == h == d:
        return SymmetrySpec("cyclic", (0.0, 0.0, 1.0), 4)
    if w == h:
        return SymmetrySpec("cyclic", (0.0, 0.0, 1.0), 4)
    if h == d:
        return SymmetrySpec("cyclic", (1.0, 0.0, 0.0), 4)
    if w == d:
        return SymmetrySpec("cyclic", (0.0, 1.0, 0.0), 4)
    return SymmetrySpec("cyclic", (0.0, 0.0, 1.0), 2)


def _sample_box_surface(dims: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    w, h, d = dims
    # (area, fixed axis, sign) for the six faces
    faces = [(h * d, 0, s) for s in (1, -1)] + \
            [(w * d, 1, s) for s in (1, -1)] + \
            [(w * h, 2, s) for s in (1, -1)]
    areas = np.array([f[0] for f in faces])
    counts = _allocate(areas, count)
    half = dims / 2.0
    pts = []
    for (area, axis, sign), c in zip(faces, counts):
        if c == 0:
            continue
        p = rng.uniform(-1.0, 1.0, size=(c, 3)) * half
        p[:, axis] = sign * half[axis]
        pts.append(p)
    return np.concatenate(pts)


def _sample_cylinder_surface(radius: float, height: float, count: int,
                             rng: np.random.Generator) -> np.ndarray:
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius * radius
    counts = _allocate(np.array([lateral, cap, cap]), count)
    pts = []
    n = counts[0]
    if n:
        ang = rng.uniform(0.0, 2 * np.pi, n)
        # stratify heights so even a couple of generator rings span the shape
        z = (np.arange(n) + rng.uniform(0.15, 0.85, n)) / n * height - height / 2
        pts.append(np.stack([radius * np.cos(ang), radius * np.sin(ang), z], axis=1))
    for sign, n in zip((1, -1), counts[1:]):
        if n:
            ang = rng.uniform(0.0, 2 * np.pi, n)
            rho = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
            pts.append(np.stack([rho * np.cos(ang), rho * np.sin(ang),
                                 np.full(n, sign * height / 2)], axis=1))
    return np.concatenate(pts)


def _sample_blob_surface(shape_seed: int, count: int, rng: np.random.Generator) -> np.ndarray:
    shape_rng = np.random.default_rng([shape_seed, 0xB10B])
    centers = shape_rng.standard_normal((6, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amps = shape_rng.uniform(0.1, 0.5, 6)
    widths = shape_rng.uniform(0.3, 0.8, 6)
    dirs = rng.standard_normal((count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radius = np.full(count, 1.0)
    for c, a, w in zip(centers, amps, widths):
        radius += a * np.exp(-((dirs - c) ** 2).sum(axis=1) / (w * w))
    return 0.06 * radius[:, None] * dirs


def _allocate(weights: np.ndarray, total: int) -> np.ndarray:
    """Deterministic proportional allocation (largest remainder)."""
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[: total - counts.sum()]:
        counts[i] += 1
    return counts


def generate_model(shape: Shape, m: int, seed: int = 0, name: str | None = None,
                   ) -> tuple[ObjectModel, SymmetrySpec]:
    """Sample m surface points with an exactly replicated symmetry group.

    Generator points are sampled on the surface (area-stratified, seeded)
    and replicated by the shape's rotation group orbit by orbit, so the
    declared symmetry holds by construction. The model is recentered to its
    centroid, then certified: every declared symmetry rotation must keep
    add_s below 1e-3 or InvalidShape is raised. Continuous groups replicate
    as rings of 157-449 points, so m needs a divisor in that range (any
    multiple of 180 works); finite groups prefer m divisible by the group
    order (a truncated final orbit is tolerable for large m).
    """
    if m < 4:
        raise InvalidShape("need at least 4 model points")
    rng = np.random.default_rng([seed, 0x5EED])

    if isinstance(shape, Box):
        dims = np.array([shape.w, shape.h, shape.d], dtype=np.float64)
        if (dims <= 0).any():
            raise InvalidShape("box dimensions must be positive")
        group = _signed_permutations(dims)
        sym = _box_symmetry(dims)
        gens = _sample_box_surface(dims, -(-m // len(group)), rng)
        pts = np.stack([g @ p for p in gens for g in group])  # orbit-major
        default_name = "box"
    elif isinstance(shape, Cylinder):
        if shape.radius <= 0 or shape.height <= 0:
            raise InvalidShape("cylinder dimensions must be positive")
        # a K-point ring at radius rho drifts by at most ~rho*pi/K under an
        # arbitrary axis rotation; keep that under the 1e-3 certificate
        k_min = max(8, int(np.ceil(np.pi * shape.radius / 9e-4)))
        ring = next((k for k in range(k_min, 3 * k_min) if m % k == 0), None)
        if ring is None:
            raise InvalidShape(
                f"m={m} has no divisor in [{k_min}, {3 * k_min}); "
                f"pick a multiple of a ring size (e.g. m = {k_min} * n)")
        sym = SymmetrySpec("continuous", (0.0, 0.0, 1.0))
        gens = _sample_cylinder_surface(shape.radius, shape.height, m // ring, rng)
        ang = 2.0 * np.pi * np.arange(ring) / ring
        ca, sa = np.cos(ang), np.sin(ang)
        x, y, z = gens[:, 0, None], gens[:, 1, None], gens[:, 2, None]
        pts = np.stack([x * ca - y * sa, x * sa + y * ca,
                        np.broadcast_to(z, (len(gens), ring))], axis=2).reshape(-1, 3)
        default_name = "cylinder"
    elif isinstance(shape, Blob):
        sym = SymmetrySpec("none")
        pts = _sample_blob_surface(shape.seed, m, rng)
        default_name = "blob"
    else:
        raise InvalidShape(f"unknown shape {shape!r}")

    pts = pts[:m]
    pts = pts - pts.mean(axis=0)
    model = ObjectModel(pts, name or default_name)
    _certify(model, sym)
    return model, sym


def _certify(model: ObjectModel, sym: SymmetrySpec) -> None:
    """Check the declared symmetry really holds on the generated points."""
    identity = Pose.identity()
    if sym.kind == "cyclic":
        checks = sym.elements()[1:]
    elif sym.kind == "continuous":
        angles = np.linspace(0.37, 2 * np.pi - 0.41, 8)
        checks = [Rotation.from_axis_angle(sym.axis, a) for a in angles]
    else:
        return
    for s in checks:
        err = add_s(identity, Pose(s, np.zeros(3)), model)
        if err >= 1e-3:
            raise InvalidShape(
                f"generated model violates its symmetry certificate "
                f"(add_s={err:.2e} under {s!r})")


@dataclass(frozen=True)
class NoiseSpec:
    """Predictor error model: rotation spread (radians), translation spread
    (meters), probability of a symmetry-confused top bin, and the RNG seed."""

    rot_kappa: float = 0.1
    trans_sigma: float = 0.01
    confusion_p: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rot_kappa < 0 or self.trans_sigma < 0:
            raise ValueError("noise spreads must be >= 0")
        if not 0.0 <= self.confusion_p <= 1.0:
            raise ValueError("confusion_p must be in [0, 1]")

    def is_zero(self) -> bool:
        return self.rot_kappa == 0 and self.trans_sigma == 0 and self.confusion_p == 0


def _random_rotation_noise(rng: np.random.Generator, kappa: float) -> Rotation:
    axis = rng.standard_normal(3)
    angle = abs(rng.normal(0.0, kappa)) if kappa > 0 else 0.0
    if angle == 0.0:
        return Rotation.identity()
    return Rotation.from_axis_angle(axis, angle)


def noisy_predict(gt_in_view: Pose, noise: NoiseSpec, cfg: CodecConfig,
                  sym: SymmetrySpec, rng: np.random.Generator | None = None,
                  ) -> BinDeltaCode:
    """Emit a bin & delta code the way an imperfect network head would.

    With all noise at zero this is exactly encode(gt_in_view). Otherwise the
    rotation may first be right-multiplied by a random symmetry element
    (probability confusion_p), the neighbor sets come from that rotation and
    the true translation, each neighbor bin's delta is perturbed
    independently (rotation noise of spread rot_kappa, translation noise of
    spread trans_sigma), and confidences are the theta pattern under small
    multiplicative jitter.
    """
    if noise.is_zero():
        return encode(gt_in_view, cfg)
    if rng is None:
        rng = np.random.default_rng(noise.seed)

    r_base = gt_in_view.r
    if rng.uniform() < noise.confusion_p:
        r_base = r_base @ sym.random_element(rng)

    n = cfg.bins.n
    b_rot = np.zeros(n)
    d_rot = np.zeros((n, 4))
    neighbors = nn_rotations(r_base, cfg.bins, cfg.k_rot)
    for rank, i in enumerate(neighbors):
        theta = cfg.theta1 if rank == 0 else cfg.theta2
        b_rot[i] = theta * np.exp(rng.normal(0.0, CONFIDENCE_JITTER))
        wobble = _random_rotation_noise(rng, noise.rot_kappa)
        d_rot[i] = ((wobble @ r_base) @ cfg.bins.centers[i].inverse()).q

    axes = []
    for x, grid in zip(gt_in_view.t, cfg.grids):
        b = np.zeros(grid.m)
        d = np.zeros(grid.m)
        for rank, i in enumerate(nn_axis(float(x), grid, cfg.k_axis)):
            theta = cfg.theta1 if rank == 0 else cfg.theta2
            b[i] = theta * np.exp(rng.normal(0.0, CONFIDENCE_JITTER))
            d[i] = x + rng.normal(0.0, noise.trans_sigma) - grid.centers[i]
        axes.append((b, d))

    return BinDeltaCode(b_rot, d_rot, axes[0][0], axes[0][1],
                        axes[1][0], axes[1][1], axes[2][0], axes[2][1])


def simulate_views(gt: Pose, n_views: int, seed) -> list[Pose]:
    """Camera-to-world poses on a jittered ring around the object.

    Radii are uniform in [0.5, 1.5] m with jittered azimuth/elevation and a
    small aim offset, so the object sits in front of every camera at a depth
    inside the default Z grid and near the optical axis.
    """
    if n_views < 1:
        raise ValueError("need at least one view")
    rng = np.random.default_rng(seed)
    cams = []
    for i in range(n_views):
        az = 2 * np.pi * (i + 0.35 * rng.uniform(-1, 1)) / n_views
        el = rng.uniform(-0.35, 0.6)
        radius = rng.uniform(0.5, 1.5)
        pos = gt.t + radius * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        aim = gt.t + rng.normal(0.0, 0.03, 3)
        fwd = aim - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        cams.append(Pose(Rotation.from_matrix(np.column_stack([right, down, fwd])), pos))
    return cams


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one simulated comparison run."""

    shape: Shape = Cylinder(0.03, 0.15)
    m: int = 240
    model_seed: int = 11
    noise: NoiseSpec = NoiseSpec()
    n_views: int = 5
    k: int = 3
    sigma: float = 0.02
    backend: str = "decoupled"  # adds | decoupled | approx
    table_n: int = 2700
    n_trials: int = 200
    tau_max: float = 0.1
    n_rot_bins: int = 60
    k_rot: int = 4
    k_axis: int = 3
    theta1: float = 0.7
    theta2: float = 0.1
    grid_x: tuple[int, float, float] = (10, -0.2, 0.2)
    grid_y: tuple[int, float, float] = (10, -0.2, 0.2)
    grid_z: tuple[int, float, float] = (40, 0.5, 4.0)
    exclude_same_view: bool = False
    topk_levels: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self) -> None:
        if self.n_views < 1 or self.n_trials < 1:
            raise ValueError("n_views and n_trials must be >= 1")
        if self.backend not in ("adds", "decoupled", "approx"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def codec_config(self) -> CodecConfig:
        return CodecConfig(
            bins=sample_so3_uniform(self.n_rot_bins),
            grid_x=make_axis_grid(*self.grid_x),
            grid_y=make_axis_grid(*self.grid_y),
            grid_z=make_axis_grid(*self.grid_z),
            k_rot=self.k_rot, k_axis=self.k_axis,
            theta1=self.theta1, theta2=self.theta2,
        )

    def to_dict(self) -> dict:
        shape = {"kind": type(self.shape).__name__.lower(),
                 **{k: v for k, v in vars(self.shape).items()}}
        return {
            "shape": shape, "m": self.m, "model_seed": self.model_seed,
            "noise": vars(self.noise), "n_views": self.n_views, "k": self.k,
            "sigma": self.sigma, "backend": self.backend, "table_n": self.table_n,
            "n_trials": self.n_trials, "tau_max": self.tau_max,
            "n_rot_bins": self.n_rot_bins, "k_rot": self.k_rot,
            "k_axis": self.k_axis, "theta1": self.theta1, "theta2": self.theta2,
            "grid_x": list(self.grid_x), "grid_y": list(self.grid_y),
            "grid_z": list(self.grid_z),
            "exclude_same_view": self.exclude_same_view,
            "topk_levels": list(self.topk_levels),
        }


def default_config(seed: int = 0, n_trials: int = 200) -> ExperimentConfig:
    """The shipped operating point: a continuously symmetric cylinder with a
    30% symmetry-confused predictor, five views, 81 hypotheses per view."""
    return ExperimentConfig(noise=NoiseSpec(seed=seed), n_trials=n_trials)


def _make_backend(cfg: ExperimentConfig, model: ObjectModel):
    if cfg.backend == "adds":
        return AddSBackend(model)
    if cfg.backend == "decoupled":
        return DecoupledBackend(model)
    bins = sample_so3_uniform(cfg.table_n)
    return TableBackend(precompute_table(bins, model), bins)


def run_experiment(cfg: ExperimentConfig, model: ObjectModel | None = None,
                   sym: SymmetrySpec | None = None, backend=None) -> dict:
    """Run the configured trials and report single-view / top-K / fused mPCK.

    The report's "config" and "results" sections are bit-reproducible for a
    given config; "timing" is not. model/sym/backend may be passed in to
    reuse prebuilt objects (they must match the config's intent).
    """
    t_start = time.perf_counter()
    if model is None or sym is None:
        model, sym = generate_model(cfg.shape, cfg.m, seed=cfg.model_seed)
    codec = cfg.codec_config()
    if backend is None:
        backend = _make_backend(cfg, model)

    max_k = max(max(cfg.topk_levels), cfg.k)
    seed = cfg.noise.seed
    per_trial = []
    voting_seconds = 0.0
    for t in range(cfg.n_trials):
        trial_rng = np.random.default_rng([seed, 7919, t])
        gt_world = Pose(Rotation.random(trial_rng), trial_rng.uniform(-0.05, 0.05, 3))
        cams = simulate_views(gt_world, cfg.n_views, seed=[seed, 104729, t])
        codes = [
            noisy_predict(cam.inverse() @ gt_world, cfg.noise, codec, sym,
                          rng=np.random.default_rng([seed, 15485863, t, v]))
            for v, cam in enumerate(cams)
        ]
        gt_ref = cams[0].inverse() @ gt_world

        d_single = add_s(decode(codes[0], codec), gt_ref, model)

        hyps = top_k_hypotheses(codes[0], codec, max_k)
        dists = add_s_many([h.pose for h in hyps], gt_ref, model)
        ranks = np.array([h.ranks for h in hyps])
        d_topk = [float(dists[(ranks < k).all(axis=1)].min()) for k in cfg.topk_levels]

        vs = ViewSet([View(camera_pose=c, code=code) for c, code in zip(cams, codes)])
        result = fuse(vs, codec, cfg.k, cfg.sigma, backend,
                      exclude_same_view=cfg.exclude_same_view)
        voting_seconds += result.seconds
        d_fused = add_s(result.winner, gt_ref, model)

        per_trial.append({"single": d_single, "topk": d_topk, "fused": d_fused})

    singles = [r["single"] for r in per_trial]
    fused = [r["fused"] for r in per_trial]
    mpck_single = mpck(singles, cfg.tau_max).mpck
    mpck_fused = mpck(fused, cfg.tau_max).mpck
    mpck_topk = {
        str(k): mpck([r["topk"][i] for r in per_trial], cfg.tau_max).mpck
        for i, k in enumerate(cfg.topk_levels)
    }
    return {
        "config": cfg.to_dict(),
        "results": {
            "mpck_single": mpck_single,
            "mpck_topk": mpck_topk,
            "mpck_fused": mpck_fused,
            "improvement": mpck_fused - mpck_single,
            "per_trial": per_trial,
        },
        "timing": {
            "total_seconds": time.perf_counter() - t_start,
            "voting_seconds": voting_seconds,
        },
    }
