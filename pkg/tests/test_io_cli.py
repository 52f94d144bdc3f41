import json
import logging

import numpy as np
import pytest
from click.testing import CliRunner

from posefuse import io as pfio
from posefuse.cli import main
from posefuse.codec import CodecConfig, decode, encode
from posefuse.errors import FileFormatError, TableMismatch
from posefuse.geometry import Pose, geodesic_distance
from posefuse.metrics import ObjectModel
from posefuse.multiview import View, ViewSet
from posefuse.tessellation import precompute_table, sample_so3_uniform

from conftest import random_pose


@pytest.fixture()
def cfg(small_bins, rgbd_grids):
    return CodecConfig(bins=small_bins, grid_x=rgbd_grids[0], grid_y=rgbd_grids[1],
                       grid_z=rgbd_grids[2])


class TestPoseFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        poses = [random_pose(rng) for _ in range(10)]
        path = tmp_path / "poses.json"
        pfio.save_poses(poses, path)
        loaded = pfio.load_poses(path)
        for a, b in zip(poses, loaded):
            assert np.array_equal(a.r.q, b.r.q)
            assert np.array_equal(a.t, b.t)

    def test_bad_quaternion_rejected(self, tmp_path):
        path = tmp_path / "poses.json"
        path.write_text('[{"q": [1.0, 0.1, 0.0, 0.0], "t": [0, 0, 0]}]')
        with pytest.raises(FileFormatError, match=r"poses\[0\]\.q"):
            pfio.load_poses(path)

    def test_slightly_off_quaternion_renormalized_with_warning(self, tmp_path, caplog):
        q = [1.0 + 5e-8, 0.0, 0.0, 0.0]
        path = tmp_path / "poses.json"
        path.write_text(json.dumps([{"q": q, "t": [0, 0, 0]}]))
        with caplog.at_level(logging.WARNING):
            poses = pfio.load_poses(path)
        assert "renormalizing" in caplog.text
        assert abs(np.linalg.norm(poses[0].r.q) - 1.0) < 1e-12


class TestPointCloudFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        model = ObjectModel(rng.normal(size=(37, 3)) * 0.1, "thing")
        path = tmp_path / "thing.xyz"
        pfio.save_pointcloud(model, path)
        loaded = pfio.load_pointcloud(path)
        assert loaded.name == "thing"
        assert np.array_equal(loaded.points, model.points)
        assert loaded.content_hash() == model.content_hash()

    @pytest.mark.parametrize("text,line", [
        ("abc 3\n", 1),
        ("xyz nope\n", 1),
        ("xyz 2\n0 0 0\n", 3),
        ("xyz 1\n0 0\n", 2),
        ("xyz 1\n0 zero 0\n", 2),
        ("xyz 1\n0 0 0\n1 1 1\n", 3),
        ("xyz 1\n0 nan 0\n", 2),
    ])
    def test_errors_name_the_line(self, tmp_path, text, line):
        path = tmp_path / "bad.xyz"
        path.write_text(text)
        with pytest.raises(FileFormatError, match=f":{line}:"):
            pfio.load_pointcloud(path)


class TestCodeFiles:
    def test_round_trip_exact_and_sparse(self, cfg, tmp_path):
        rng = np.random.default_rng(2)
        code = encode(random_pose(rng), cfg)
        doc = pfio.code_to_dict(code)
        assert len(doc["rot"]["conf"]["indices"]) == cfg.k_rot
        assert len(doc["x"]["conf"]["indices"]) == cfg.k_axis
        path = tmp_path / "code.json"
        pfio.dump_json(doc, path)
        back = pfio.code_from_dict(pfio.load_json(path), "code")
        assert np.array_equal(back.b_rot, code.b_rot)
        assert np.array_equal(back.d_rot, code.d_rot)
        assert np.array_equal(back.d_tz, code.d_tz)

    def test_malformed_code_names_field(self, cfg):
        rng = np.random.default_rng(3)
        doc = pfio.code_to_dict(encode(random_pose(rng), cfg))
        del doc["y"]["conf"]
        with pytest.raises(FileFormatError, match=r"code\.y"):
            pfio.code_from_dict(doc, "code")

    def test_out_of_range_index_rejected(self, cfg):
        rng = np.random.default_rng(4)
        doc = pfio.code_to_dict(encode(random_pose(rng), cfg))
        doc["x"]["conf"]["indices"][0] = 99
        with pytest.raises(FileFormatError, match="out of range"):
            pfio.code_from_dict(doc, "code")


class TestViewSetFiles:
    def test_round_trip(self, cfg, tmp_path):
        rng = np.random.default_rng(5)
        views = [
            View(camera_pose=random_pose(rng), code=encode(random_pose(rng), cfg)),
            View(camera_pose=random_pose(rng),
                 hypotheses=[random_pose(rng) for _ in range(3)]),
        ]
        path = tmp_path / "views.json"
        pfio.save_viewset(ViewSet(views, reference=1), path)
        vs = pfio.load_viewset(path)
        assert vs.reference == 1
        assert vs.views[0].code is not None
        assert len(vs.views[1].hypotheses) == 3
        assert np.array_equal(vs.views[0].camera_pose.t, views[0].camera_pose.t)

    def test_code_xor_hypotheses_enforced(self, tmp_path):
        doc = {"reference": 0,
               "views": [{"camera_pose": {"q": [1, 0, 0, 0], "t": [0, 0, 0]}}]}
        path = tmp_path / "views.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(FileFormatError, match=r"views\[0\]"):
            pfio.load_viewset(path)


class TestTessellationFiles:
    def test_bins_round_trip_bit_exact(self, tmp_path):
        bins = sample_so3_uniform(60)
        path = tmp_path / "bins.json"
        pfio.save_tessellation(path, bins, sampler={"kind": "hopf-fibonacci", "n": 60})
        tf = pfio.load_tessellation(path)
        assert np.array_equal(tf.bins.quats, bins.quats)
        assert tf.sampler == {"kind": "hopf-fibonacci", "n": 60}

    def test_table_round_trip_and_hash_binding(self, tmp_path, small_cylinder, small_bins):
        table = precompute_table(small_bins, small_cylinder)
        path = tmp_path / "table.json"
        pfio.save_tessellation(path, small_bins, table=table)
        tf = pfio.load_tessellation(path)
        assert np.array_equal(tf.table.entries, table.entries)
        pfio.check_table_model(tf.table, small_cylinder)  # matching model: fine
        other = ObjectModel(small_cylinder.points * 1.001, "other")
        with pytest.raises(TableMismatch):
            pfio.check_table_model(tf.table, other)

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 99, "bin_quaternions": [[1, 0, 0, 0]]}))
        with pytest.raises(FileFormatError, match="version"):
            pfio.load_tessellation(path)


class TestConfigFiles:
    def test_codec_config(self, tmp_path):
        doc = {"so3_bins": 60,
               "grids": {"x": [10, -0.2, 0.2], "y": [10, -0.2, 0.2],
                         "z": [40, 0.5, 4.0]}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        cfg = pfio.load_codec_config(path)
        assert cfg.bins.n == 60
        assert cfg.grid_z.m == 40
        assert cfg.k_rot == 4

    def test_codec_config_from_bins_file(self, tmp_path):
        bins = sample_so3_uniform(17)
        bins_path = tmp_path / "bins.json"
        pfio.save_tessellation(bins_path, bins)
        doc = {"bins_file": str(bins_path), "k_rot": 2,
               "grids": {"x": [10, -0.2, 0.2], "y": [10, -0.2, 0.2],
                         "z": [10, -0.2, 0.2]}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        cfg = pfio.load_codec_config(path)
        assert cfg.bins.n == 17 and cfg.k_rot == 2

    def test_experiment_config(self):
        cfg = pfio.load_experiment_config("configs/default_experiment.json")
        assert cfg.n_views == 5 and cfg.k == 3
        assert cfg.noise.confusion_p == 0.3

    def test_experiment_config_bad_shape(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"shape": {"kind": "torus"}, "noise": {}}))
        with pytest.raises(FileFormatError, match="shape.kind"):
            pfio.load_experiment_config(path)


@pytest.fixture()
def workdir(tmp_path, cfg, small_cylinder):
    """Config, model and pose files for CLI runs."""
    cfg_doc = {"so3_bins": 60,
               "grids": {"x": [10, -0.2, 0.2], "y": [10, -0.2, 0.2],
                         "z": [10, -0.2, 0.2]}}
    (tmp_path / "codec.json").write_text(json.dumps(cfg_doc))
    pfio.save_pointcloud(small_cylinder, tmp_path / "model.xyz")
    rng = np.random.default_rng(6)
    pose = random_pose(rng)
    pfio.dump_json(pfio.pose_to_dict(pose), tmp_path / "pose.json")
    return tmp_path, pose


class TestCli:
    def run(self, *args):
        return CliRunner().invoke(main, [str(a) for a in args])

    def test_encode_decode_round_trip(self, workdir):
        d, pose = workdir
        r = self.run("encode", "--pose", d / "pose.json", "--config",
                     d / "codec.json", "--out", d / "code.json")
        assert r.exit_code == 0, r.output
        r = self.run("decode", "--code", d / "code.json", "--config", d / "codec.json")
        assert r.exit_code == 0, r.output
        decoded = pfio.pose_from_dict(json.loads(r.stdout), "pose")
        assert geodesic_distance(decoded.r, pose.r) < 1e-9
        assert np.abs(decoded.t - pose.t).max() < 1e-12

    def test_sample_so3_and_build_table(self, workdir):
        d, _ = workdir
        r = self.run("sample-so3", "--n", 20, "--out", d / "bins.json")
        assert r.exit_code == 0, r.output
        r = self.run("build-table", "--bins", d / "bins.json", "--model",
                     d / "model.xyz", "--out", d / "table.json")
        assert r.exit_code == 0, r.output
        tf = pfio.load_tessellation(d / "table.json")
        assert tf.table is not None and tf.table.n == 20

    def test_vote_single_view_k1_is_decode(self, workdir, cfg):
        d, pose = workdir
        code = encode(pose, cfg)
        pfio.save_viewset(ViewSet([View(camera_pose=Pose.identity(), code=code)]),
                          d / "views.json")
        r = self.run("vote", "--views", d / "views.json", "--model", d / "model.xyz",
                     "--config", d / "codec.json", "--k", 1)
        assert r.exit_code == 0, r.output
        doc = json.loads(r.stdout)
        winner = pfio.pose_from_dict(doc["winner"], "winner")
        expected = decode(code, cfg)
        assert geodesic_distance(winner.r, expected.r) < 1e-9
        assert np.abs(winner.t - expected.t).max() < 1e-12
        assert doc["backend"] == "decoupled"

    def test_vote_with_table_backend(self, workdir, cfg):
        d, pose = workdir
        self.run("sample-so3", "--n", 60, "--out", d / "bins.json")
        self.run("build-table", "--bins", d / "bins.json", "--model",
                 d / "model.xyz", "--out", d / "table.json")
        code = encode(pose, cfg)
        pfio.save_viewset(ViewSet([View(camera_pose=Pose.identity(), code=code)]),
                          d / "views.json")
        r = self.run("vote", "--views", d / "views.json", "--model", d / "model.xyz",
                     "--config", d / "codec.json", "--table", d / "table.json")
        assert r.exit_code == 0, r.output
        assert json.loads(r.stdout)["backend"] == "approx"

    def test_vote_rejects_mismatched_table(self, workdir, cfg, tmp_path):
        d, pose = workdir
        self.run("sample-so3", "--n", 60, "--out", d / "bins.json")
        self.run("build-table", "--bins", d / "bins.json", "--model",
                 d / "model.xyz", "--out", d / "table.json")
        rng = np.random.default_rng(7)
        pfio.save_pointcloud(ObjectModel(rng.normal(size=(20, 3)), "other"),
                             d / "other.xyz")
        code = encode(pose, cfg)
        pfio.save_viewset(ViewSet([View(camera_pose=Pose.identity(), code=code)]),
                          d / "views.json")
        r = self.run("vote", "--views", d / "views.json", "--model", d / "other.xyz",
                     "--config", d / "codec.json", "--table", d / "table.json")
        assert r.exit_code == 2

    def test_eval_perfect_predictions(self, workdir):
        d, pose = workdir
        rng = np.random.default_rng(8)
        poses = [random_pose(rng) for _ in range(4)]
        pfio.save_poses(poses, d / "pred.json")
        pfio.save_poses(poses, d / "gt.json")
        r = self.run("eval", "--pred", d / "pred.json", "--gt", d / "gt.json",
                     "--model", d / "model.xyz", "--out-curve", d / "curve.csv")
        assert r.exit_code == 0, r.output
        doc = json.loads(r.stdout)
        assert doc["mpck"] == 1.0
        header, first = (d / "curve.csv").read_text().splitlines()[:2]
        assert header == "threshold,accuracy"
        assert first.split(",")[1] == "1.0"

    def test_simulate_smoke(self, workdir):
        d, _ = workdir
        exp = {"shape": {"kind": "cylinder", "radius": 0.03, "height": 0.15},
               "m": 240, "noise": {"rot_kappa": 0.05, "trans_sigma": 0.01,
                                   "confusion_p": 0.2, "seed": 1},
               "n_trials": 3, "n_views": 2}
        (d / "exp.json").write_text(json.dumps(exp))
        r = self.run("simulate", "--config", d / "exp.json", "--out", d / "report.json")
        assert r.exit_code == 0, r.output
        report = json.loads((d / "report.json").read_text())
        assert "timing" not in report  # deterministic output only
        assert len(report["results"]["per_trial"]) == 3

    def test_byte_identical_reruns(self, workdir):
        d, _ = workdir
        args = ["encode", "--pose", d / "pose.json", "--config", d / "codec.json"]
        a, b = self.run(*args), self.run(*args)
        assert a.exit_code == b.exit_code == 0
        assert a.stdout_bytes == b.stdout_bytes

    def test_validation_failure_exits_2(self, workdir):
        d, _ = workdir
        (d / "broken.json").write_text("{not json")
        r = self.run("decode", "--code", d / "broken.json", "--config", d / "codec.json")
        assert r.exit_code == 2
        assert "line" in r.stderr

    @pytest.mark.parametrize("cmd", ["sample-so3", "build-table", "encode", "decode",
                                     "vote", "eval", "simulate"])
    def test_help_documents_every_command(self, cmd):
        r = self.run(cmd, "--help")
        assert r.exit_code == 0
        assert "--" in r.stdout
