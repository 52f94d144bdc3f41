"""File formats: point clouds, view sets, tessellations, configs, reports.

Structured data is JSON (stable key order, repr-formatted floats, so writes
are byte-identical and floats round-trip exactly); point clouds are plain
text with an "xyz <count>" header followed by one "x y z" line per point.
Distance tables embed the name and content hash of the model they were
built from and refuse to be used against anything else.

Every parse or validation failure raises FileFormatError naming the
offending field (JSON) or line (point clouds).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .codec import BinDeltaCode, CodecConfig
from .errors import FileFormatError, TableMismatch
from .geometry import Pose, Rotation
from .metrics import ObjectModel
from .multiview import View, ViewSet
from .simharness import (
    Blob,
    Box,
    Cylinder,
    ExperimentConfig,
    NoiseSpec,
)
from .tessellation import (
    AxisGrid,
    RotationBins,
    RotDistanceTable,
    make_axis_grid,
    sample_so3_uniform,
)

log = logging.getLogger(__name__)

TESSELLATION_VERSION = 1


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dump accepts them."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def dump_json(obj, path=None) -> str:
    """Deterministic JSON: sorted keys, two-space indent, repr floats."""
    text = json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FileFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise FileFormatError(f"missing field {where}.{key}")
    return d[key]


# ---------------------------------------------------------------------------
# poses

def pose_to_dict(p: Pose) -> dict:
    return {"q": list(p.r.q), "t": list(p.t)}


def pose_from_dict(d: dict, where: str = "pose") -> Pose:
    if not isinstance(d, dict):
        raise FileFormatError(f"{where} must be an object with q and t")
    q = np.asarray(_need(d, "q", where), dtype=np.float64)
    t = np.asarray(_need(d, "t", where), dtype=np.float64)
    if q.shape != (4,):
        raise FileFormatError(f"{where}.q must have 4 components")
    if t.shape != (3,):
        raise FileFormatError(f"{where}.t must have 3 components")
    return Pose(_unit_quaternion(q, where + ".q"), t)


def _unit_quaternion(q: np.ndarray, where: str) -> Rotation:
    err = abs(float(np.linalg.norm(q)) - 1.0)
    if err > 1e-6:
        raise FileFormatError(f"{where}: quaternion norm off by {err:.2e} (> 1e-6)")
    if err > 1e-9:
        log.warning("%s: quaternion norm off by %.2e, renormalizing", where, err)
    return Rotation(q)


def load_poses(path) -> list[Pose]:
    """JSON file holding a list of {"q": ..., "t": ...} pose objects."""
    data = load_json(path)
    if not isinstance(data, list):
        raise FileFormatError(f"{path}: expected a JSON list of poses")
    return [pose_from_dict(d, f"poses[{i}]") for i, d in enumerate(data)]


def save_poses(poses, path) -> None:
    dump_json([pose_to_dict(p) for p in poses], path)


# ---------------------------------------------------------------------------
# point clouds

def save_pointcloud(model: ObjectModel, path) -> None:
    with open(path, "w") as f:
        f.write(f"xyz {model.m}\n")
        for x, y, z in model.points:
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_pointcloud(path, name: str | None = None) -> ObjectModel:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != "xyz":
            raise FileFormatError(f"{path}:1: header must be 'xyz <count>'")
        try:
            m = int(header[1])
        except ValueError:
            raise FileFormatError(f"{path}:1: point count {header[1]!r} is not an integer")
        pts = np.empty((m, 3))
        for i in range(m):
            line = f.readline()
            if not line:
                raise FileFormatError(
                    f"{path}:{i + 2}: expected {m} points, file ends after {i}")
            parts = line.split()
            if len(parts) != 3:
                raise FileFormatError(f"{path}:{i + 2}: expected 3 coordinates")
            try:
                pts[i] = [float(v) for v in parts]
            except ValueError:
                raise FileFormatError(f"{path}:{i + 2}: non-numeric coordinate")
        if not np.isfinite(pts).all():
            bad = int(np.argwhere(~np.isfinite(pts))[0][0])
            raise FileFormatError(f"{path}:{bad + 2}: non-finite coordinate")
        extra = f.readline().split()
        if extra:
            raise FileFormatError(f"{path}:{m + 2}: trailing data after {m} points")
    if name is None:
        name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return ObjectModel(pts, name)


# ---------------------------------------------------------------------------
# bin & delta codes (sparse)

def _sparse(values: np.ndarray) -> dict:
    idx = np.nonzero(values)[0] if values.ndim == 1 else np.nonzero(values.any(axis=1))[0]
    return {"n": int(values.shape[0]), "indices": [int(i) for i in idx],
            "values": jsonable(values[idx])}


def _dense(d: dict, where: str, width: int | None = None) -> np.ndarray:
    n = int(_need(d, "n", where))
    idx = _need(d, "indices", where)
    vals = np.asarray(_need(d, "values", where), dtype=np.float64)
    if len(idx) != len(vals):
        raise FileFormatError(f"{where}: indices and values length mismatch")
    shape = (n,) if width is None else (n, width)
    if vals.ndim != len(shape) or (width is not None and vals.size and vals.shape[1] != width):
        raise FileFormatError(f"{where}: values have the wrong shape")
    out = np.zeros(shape)
    for k, i in enumerate(idx):
        if not 0 <= int(i) < n:
            raise FileFormatError(f"{where}: index {i} out of range [0, {n})")
        out[int(i)] = vals[k]
    return out


def code_to_dict(code: BinDeltaCode) -> dict:
    return {
        "rot": {"conf": _sparse(code.b_rot), "delta": _sparse(code.d_rot)},
        "x": {"conf": _sparse(code.b_tx), "delta": _sparse(code.d_tx)},
        "y": {"conf": _sparse(code.b_ty), "delta": _sparse(code.d_ty)},
        "z": {"conf": _sparse(code.b_tz), "delta": _sparse(code.d_tz)},
    }


def code_from_dict(d: dict, where: str = "code") -> BinDeltaCode:
    rot = _need(d, "rot", where)
    b_rot = _dense(_need(rot, "conf", where + ".rot"), where + ".rot.conf")
    d_rot = _dense(_need(rot, "delta", where + ".rot"), where + ".rot.delta", width=4)
    if d_rot.shape[0] != b_rot.shape[0]:
        raise FileFormatError(f"{where}.rot: conf and delta lengths differ")
    for i in np.nonzero(d_rot.any(axis=1))[0]:
        _unit_quaternion(d_rot[i], f"{where}.rot.delta[{int(i)}]")
    axes = []
    for ax in ("x", "y", "z"):
        a = _need(d, ax, where)
        b = _dense(_need(a, "conf", f"{where}.{ax}"), f"{where}.{ax}.conf")
        dd = _dense(_need(a, "delta", f"{where}.{ax}"), f"{where}.{ax}.delta")
        if b.shape != dd.shape:
            raise FileFormatError(f"{where}.{ax}: conf and delta lengths differ")
        axes.append((b, dd))
    return BinDeltaCode(b_rot, d_rot, axes[0][0], axes[0][1],
                        axes[1][0], axes[1][1], axes[2][0], axes[2][1])


# ---------------------------------------------------------------------------
# view sets

def viewset_to_dict(vs: ViewSet) -> dict:
    views = []
    for v in vs.views:
        entry: dict = {"camera_pose": pose_to_dict(v.camera_pose)}
        if v.code is not None:
            entry["code"] = code_to_dict(v.code)
        else:
            entry["hypotheses"] = [pose_to_dict(p) for p in v.hypotheses]
        views.append(entry)
    return {"reference": vs.reference, "views": views}


def save_viewset(vs: ViewSet, path) -> None:
    dump_json(viewset_to_dict(vs), path)


def load_viewset(path) -> ViewSet:
    data = load_json(path)
    views_raw = _need(data, "views", "viewset")
    if not isinstance(views_raw, list) or not views_raw:
        raise FileFormatError("viewset.views must be a non-empty list")
    views = []
    for i, v in enumerate(views_raw):
        where = f"views[{i}]"
        cam = pose_from_dict(_need(v, "camera_pose", where), where + ".camera_pose")
        if ("code" in v) == ("hypotheses" in v):
            raise FileFormatError(f"{where}: need exactly one of code or hypotheses")
        if "code" in v:
            views.append(View(camera_pose=cam,
                              code=code_from_dict(v["code"], where + ".code")))
        else:
            poses = [pose_from_dict(p, f"{where}.hypotheses[{j}]")
                     for j, p in enumerate(v["hypotheses"])]
            if not poses:
                raise FileFormatError(f"{where}.hypotheses must be non-empty")
            views.append(View(camera_pose=cam, hypotheses=poses))
    reference = data.get("reference", 0)
    if not isinstance(reference, int) or not 0 <= reference < len(views):
        raise FileFormatError("viewset.reference out of range")
    return ViewSet(views=views, reference=reference)


# ---------------------------------------------------------------------------
# tessellations (bins + grids + optional distance table)

@dataclass
class TessellationFile:
    bins: RotationBins
    sampler: dict
    grids: tuple[AxisGrid, AxisGrid, AxisGrid] | None = None
    table: RotDistanceTable | None = None


def save_tessellation(path, bins: RotationBins, sampler: dict | None = None,
                      grids=None, table: RotDistanceTable | None = None) -> None:
    doc: dict = {
        "version": TESSELLATION_VERSION,
        "sampler": sampler or {"kind": "custom"},
        "bin_quaternions": jsonable(bins.quats),
    }
    if grids is not None:
        doc["grids"] = [{"m": g.m, "s_min": g.s_min, "s_max": g.s_max} for g in grids]
    if table is not None:
        if table.n != bins.n:
            raise TableMismatch("table size does not match the bin set being saved")
        doc["table"] = {
            "model_name": table.model_name,
            "model_hash": table.model_hash,
            "entries": jsonable(table.entries),
        }
    dump_json(doc, path)


def load_tessellation(path) -> TessellationFile:
    data = load_json(path)
    version = _need(data, "version", "tessellation")
    if version != TESSELLATION_VERSION:
        raise FileFormatError(f"tessellation.version {version} unsupported "
                              f"(expected {TESSELLATION_VERSION})")
    quats = np.asarray(_need(data, "bin_quaternions", "tessellation"), dtype=np.float64)
    if quats.ndim != 2 or quats.shape[1] != 4:
        raise FileFormatError("tessellation.bin_quaternions must be an (n, 4) array")
    bins = RotationBins(quats)
    grids = None
    if "grids" in data:
        raw = data["grids"]
        if len(raw) != 3:
            raise FileFormatError("tessellation.grids must list exactly 3 axes")
        grids = tuple(
            make_axis_grid(int(_need(g, "m", f"grids[{i}]")),
                           float(_need(g, "s_min", f"grids[{i}]")),
                           float(_need(g, "s_max", f"grids[{i}]")))
            for i, g in enumerate(raw)
        )
    table = None
    if "table" in data:
        t = data["table"]
        entries = np.asarray(_need(t, "entries", "table"), dtype=np.float64)
        if entries.shape != (bins.n, bins.n):
            raise FileFormatError(
                f"table.entries shape {entries.shape} does not match {bins.n} bins")
        table = RotDistanceTable(
            n=bins.n, entries=entries,
            model_name=str(_need(t, "model_name", "table")),
            model_hash=str(_need(t, "model_hash", "table")),
        )
    return TessellationFile(bins=bins, sampler=data.get("sampler", {}),
                            grids=grids, table=table)


def check_table_model(table: RotDistanceTable, model: ObjectModel) -> None:
    """Refuse to pair a distance table with a model it was not built from."""
    if table.model_hash and table.model_hash != model.content_hash():
        raise TableMismatch(
            f"table was built from {table.model_name!r} "
            f"(hash {table.model_hash[:12]}...), not this model")


# ---------------------------------------------------------------------------
# codec / experiment configs

def codec_config_from_dict(d: dict, where: str = "config") -> CodecConfig:
    grids = _need(d, "grids", where)
    axes = []
    for ax in ("x", "y", "z"):
        g = _need(grids, ax, where + ".grids")
        if not isinstance(g, list) or len(g) != 3:
            raise FileFormatError(f"{where}.grids.{ax} must be [m, s_min, s_max]")
        axes.append(make_axis_grid(int(g[0]), float(g[1]), float(g[2])))
    if "bins_file" in d:
        bins = load_tessellation(d["bins_file"]).bins
    else:
        bins = sample_so3_uniform(int(d.get("so3_bins", 60)))
    try:
        return CodecConfig(
            bins=bins, grid_x=axes[0], grid_y=axes[1], grid_z=axes[2],
            k_rot=int(d.get("k_rot", 4)), k_axis=int(d.get("k_axis", 3)),
            theta1=float(d.get("theta1", 0.7)), theta2=float(d.get("theta2", 0.1)),
        )
    except ValueError as e:
        raise FileFormatError(f"{where}: {e}") from e


def load_codec_config(path) -> CodecConfig:
    return codec_config_from_dict(load_json(path))


_SHAPES = {"box": Box, "cylinder": Cylinder, "blob": Blob}


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    shape_raw = dict(_need(d, "shape", "experiment"))
    kind = shape_raw.pop("kind", None)
    if kind not in _SHAPES:
        raise FileFormatError(f"experiment.shape.kind must be one of {sorted(_SHAPES)}")
    try:
        shape = _SHAPES[kind](**shape_raw)
    except TypeError as e:
        raise FileFormatError(f"experiment.shape: {e}") from e
    noise_raw = _need(d, "noise", "experiment")
    try:
        noise = NoiseSpec(**noise_raw)
    except (TypeError, ValueError) as e:
        raise FileFormatError(f"experiment.noise: {e}") from e
    kwargs = {}
    for key in ("m", "model_seed", "n_views", "k", "sigma", "backend", "table_n",
                "n_trials", "tau_max", "n_rot_bins", "k_rot", "k_axis",
                "theta1", "theta2", "exclude_same_view"):
        if key in d:
            kwargs[key] = d[key]
    for key in ("grid_x", "grid_y", "grid_z", "topk_levels"):
        if key in d:
            kwargs[key] = tuple(d[key])
    try:
        return ExperimentConfig(shape=shape, noise=noise, **kwargs)
    except (TypeError, ValueError) as e:
        raise FileFormatError(f"experiment: {e}") from e


def load_experiment_config(path) -> ExperimentConfig:
    return experiment_config_from_dict(load_json(path))
