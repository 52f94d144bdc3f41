"""Command-line interface.

Every command emits deterministic JSON (stable key order, repr floats) to
stdout or --out; anything nondeterministic (timings, warnings) goes to
stderr. Exit codes: 0 success, 2 for any parse/validation failure.
"""

from __future__ import annotations

import functools
import logging
import sys

import click

from . import io as pfio
from .errors import PoseFuseError
from .metrics import add_s, mpck
from .multiview import AddSBackend, DecoupledBackend, TableBackend, fuse
from .simharness import run_experiment
from .tessellation import precompute_table, sample_so3_uniform

log = logging.getLogger("posefuse")


def _guarded(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except PoseFuseError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
    return wrapper


def _emit(doc: dict, out: str | None) -> None:
    text = pfio.dump_json(doc, out)
    if out is None:
        click.echo(text, nl=False)


@click.group()
def main():
    """Multi-view 6-DoF pose estimation toolkit."""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("sample-so3")
@click.option("--n", type=int, required=True, help="Number of rotation bins.")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Tessellation file to write.")
@_guarded
def sample_so3(n: int, out: str):
    """Sample N almost-uniform rotation bins and write a tessellation file."""
    if n < 1:
        raise PoseFuseError("--n must be >= 1")
    bins = sample_so3_uniform(n)
    pfio.save_tessellation(out, bins, sampler={"kind": "hopf-fibonacci", "n": n})
    _emit({"command": "sample-so3", "n": n, "out": out}, None)


@main.command("build-table")
@click.option("--bins", "bins_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Tessellation file holding the rotation bins.")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Point cloud file (xyz format).")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Tessellation file to write (bins + table).")
@_guarded
def build_table(bins_path: str, model_path: str, out: str):
    """Precompute the pairwise rotation-distance table for a model."""
    tf = pfio.load_tessellation(bins_path)
    model = pfio.load_pointcloud(model_path)
    table = precompute_table(tf.bins, model)
    pfio.save_tessellation(out, tf.bins, sampler=tf.sampler, grids=tf.grids,
                           table=table)
    _emit({"command": "build-table", "n": tf.bins.n, "model": model.name,
           "model_hash": table.model_hash, "out": out}, None)


@main.command("encode")
@click.option("--pose", "pose_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help='JSON file {"q": [w,x,y,z], "t": [x,y,z]}.')
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Codec config JSON.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Code file to write (default: stdout).")
@_guarded
def encode_cmd(pose_path: str, config_path: str, out: str | None):
    """Encode a pose into its sparse bin & delta code."""
    from .codec import encode

    cfg = pfio.load_codec_config(config_path)
    pose = pfio.pose_from_dict(pfio.load_json(pose_path), "pose")
    _emit(pfio.code_to_dict(encode(pose, cfg)), out)


@main.command("decode")
@click.option("--code", "code_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Code file produced by encode.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Codec config JSON.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_guarded
def decode_cmd(code_path: str, config_path: str, out: str | None):
    """Decode a bin & delta code back into a pose."""
    from .codec import decode

    cfg = pfio.load_codec_config(config_path)
    code = pfio.code_from_dict(pfio.load_json(code_path), "code")
    _emit(pfio.pose_to_dict(decode(code, cfg)), out)


@main.command("vote")
@click.option("--views", "views_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="ViewSet JSON file.")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Point cloud file.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Codec config JSON (to expand codes).")
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Tessellation file with a distance table.")
@click.option("--backend", type=click.Choice(["adds", "decoupled", "approx"]),
              default=None, help="Distance backend (default: approx with --table, "
                                 "else decoupled).")
@click.option("--sigma", type=float, default=0.02, show_default=True,
              help="Outlier-rejection distance threshold, meters.")
@click.option("--k", type=int, default=3, show_default=True,
              help="Top-k per subspace when expanding codes.")
@click.option("--exclude-same-view", is_flag=True,
              help="Only count votes between hypotheses from different views.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_guarded
def vote_cmd(views_path, model_path, config_path, table_path, backend,
             sigma, k, exclude_same_view, out):
    """Fuse a multi-view hypothesis set by voting and report the winner."""
    vs = pfio.load_viewset(views_path)
    model = pfio.load_pointcloud(model_path)
    cfg = pfio.load_codec_config(config_path)
    if backend is None:
        backend = "approx" if table_path else "decoupled"
    if backend == "approx":
        if table_path is None:
            raise PoseFuseError("--backend approx needs --table")
        tf = pfio.load_tessellation(table_path)
        if tf.table is None:
            raise PoseFuseError(f"{table_path} contains no distance table")
        pfio.check_table_model(tf.table, model)
        backend_obj = TableBackend(tf.table, tf.bins)
    elif backend == "adds":
        backend_obj = AddSBackend(model)
    else:
        backend_obj = DecoupledBackend(model)
    result = fuse(vs, cfg, k, sigma, backend_obj,
                  exclude_same_view=exclude_same_view)
    log.info("voted %d hypotheses with %s backend in %.3fs",
             len(result.hypotheses), result.backend, result.seconds)
    _emit({
        "backend": result.backend,
        "sigma": sigma,
        "k": k,
        "winner": pfio.pose_to_dict(result.winner),
        "winner_index": result.winner_index,
        "hypotheses": [
            {"view": h.view, "ranks": list(h.ranks), "vote": h.vote,
             "pose": pfio.pose_to_dict(h.pose)}
            for h in result.hypotheses
        ],
    }, out)


@main.command("eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="JSON list of predicted poses.")
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="JSON list of ground-truth poses.")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Point cloud file.")
@click.option("--tau-max", type=float, default=0.1, show_default=True,
              help="Accuracy-threshold range, meters.")
@click.option("--out-curve", type=click.Path(dir_okay=False), default=None,
              help="CSV file for the accuracy-threshold curve.")
@click.option("--curve-resolution", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_guarded
def eval_cmd(pred_path, gt_path, model_path, tau_max, out_curve,
             curve_resolution, out):
    """Score predictions against ground truth with the mPCK metric."""
    preds = pfio.load_poses(pred_path)
    gts = pfio.load_poses(gt_path)
    if len(preds) != len(gts):
        raise PoseFuseError(
            f"got {len(preds)} predictions but {len(gts)} ground-truth poses")
    if not preds:
        raise PoseFuseError("pose lists are empty")
    model = pfio.load_pointcloud(model_path)
    distances = [add_s(p, g, model) for p, g in zip(preds, gts)]
    curve = mpck(distances, tau_max)
    if out_curve:
        curve.to_csv(out_curve, resolution=curve_resolution)
    _emit({**curve.summary(), "distances": distances}, out)


@main.command("simulate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Experiment config JSON.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Report JSON to write (default: stdout).")
@_guarded
def simulate_cmd(config_path: str, out: str | None):
    """Run the noisy-predictor experiment described by a config file."""
    cfg = pfio.load_experiment_config(config_path)
    report = run_experiment(cfg)
    timing = report.pop("timing")
    log.info("simulate: %d trials in %.1fs (%.1fs voting)", cfg.n_trials,
             timing["total_seconds"], timing["voting_seconds"])
    _emit(report, out)


if __name__ == "__main__":
    main()
