import numpy as np
import pytest

from posefuse.codec import (
    CodecConfig,
    decode,
    encode,
    encode_rotation,
    encode_translation,
    top_k_hypotheses,
)
from posefuse.errors import EmptyCode
from posefuse.geometry import Pose, Rotation, geodesic_distance

from conftest import random_pose


@pytest.fixture(scope="module")
def cfg(small_bins, rgbd_grids):
    return CodecConfig(bins=small_bins, grid_x=rgbd_grids[0], grid_y=rgbd_grids[1],
                       grid_z=rgbd_grids[2])


class TestConfig:
    def test_defaults(self, cfg):
        assert (cfg.k_rot, cfg.k_axis) == (4, 3)
        assert (cfg.theta1, cfg.theta2) == (0.7, 0.1)

    def test_theta_ordering_enforced(self, small_bins, rgbd_grids):
        with pytest.raises(ValueError):
            CodecConfig(bins=small_bins, grid_x=rgbd_grids[0], grid_y=rgbd_grids[1],
                        grid_z=rgbd_grids[2], theta1=0.1, theta2=0.7)


class TestEncodeRotation:
    def test_bin_center(self, cfg):
        b, d = encode_rotation(cfg.bins.centers[7], cfg)
        assert b[7] == 0.7
        assert np.sort(b)[-4:].tolist() == [0.1, 0.1, 0.1, 0.7]
        assert geodesic_distance(Rotation(d[7]), Rotation.identity()) < 1e-9

    def test_confidences_sum_to_one_at_defaults(self, cfg):
        rng = np.random.default_rng(0)
        for _ in range(20):
            b, _ = encode_rotation(Rotation.random(rng), cfg)
            assert b.sum() == pytest.approx(0.7 + 3 * 0.1, abs=1e-12)

    def test_sparsity(self, cfg):
        rng = np.random.default_rng(1)
        b, d = encode_rotation(Rotation.random(rng), cfg)
        assert (b > 0).sum() == cfg.k_rot
        assert (np.abs(d).sum(axis=1) > 0).sum() == cfg.k_rot
        assert np.array_equal(np.nonzero(b)[0], np.nonzero(np.abs(d).sum(axis=1))[0])

    def test_every_delta_reconstructs(self, cfg):
        rng = np.random.default_rng(2)
        for _ in range(100):
            r = Rotation.random(rng)
            b, d = encode_rotation(r, cfg)
            for i in np.nonzero(b)[0]:
                assert geodesic_distance(Rotation(d[i]) @ cfg.bins.centers[i], r) < 1e-9


class TestEncodeTranslation:
    def test_exact_centers_have_zero_delta(self, cfg):
        t = np.array([cfg.grid_x.centers[0]] * 3)  # the -0.18 corner of the grid
        axes = encode_translation(t, cfg)
        for b, d in axes:
            assert np.argmax(b) == 0
            assert d[0] == 0.0

    def test_near_midpoint(self, cfg):
        axes = encode_translation([0.01, 0.0, 0.0], cfg)
        b, d = axes[0]
        assert np.argmax(b) == 5  # center 0.02
        assert d[5] == pytest.approx(-0.01, abs=1e-12)

    def test_out_of_range_clamps_with_unbounded_delta(self, cfg):
        axes = encode_translation([9.0, 0.0, 0.0], cfg)
        b, d = axes[0]
        assert np.argmax(b) == 9
        assert d[9] == pytest.approx(9.0 - 0.18, abs=1e-12)

    def test_sparsity(self, cfg):
        rng = np.random.default_rng(3)
        axes = encode_translation(rng.uniform(-0.2, 0.2, 3), cfg)
        for b, d in axes:
            assert (b > 0).sum() == cfg.k_axis


class TestDecode:
    def test_round_trip_in_range(self, cfg):
        rng = np.random.default_rng(4)
        for _ in range(10_000):
            p = random_pose(rng, t_scale=0.2)
            q = decode(encode(p, cfg), cfg)
            assert geodesic_distance(q.r, p.r) < 1e-9
            assert np.abs(q.t - p.t).max() < 1e-12

    def test_round_trip_out_of_range(self, cfg):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p = Pose(Rotation.random(rng), rng.uniform(-5.0, 5.0, 3))
            q = decode(encode(p, cfg), cfg)
            assert np.abs(q.t - p.t).max() < 1e-12

    def test_one_hot_rotation(self, cfg):
        code = encode(Pose(cfg.bins.centers[11], np.zeros(3)), cfg)
        code.b_rot[:] = 0.0
        code.b_rot[11] = 1.0
        code.d_rot[:] = 0.0
        assert geodesic_distance(decode(code, cfg).r, cfg.bins.centers[11]) < 1e-12

    def test_empty_code_raises(self, cfg):
        code = encode(Pose.identity(), cfg)
        code.b_rot[:] = -np.inf
        with pytest.raises(EmptyCode):
            decode(code, cfg)
        code.b_rot[:] = np.nan
        with pytest.raises(EmptyCode):
            decode(code, cfg)

    def test_argmax_tie_breaks_low(self, cfg):
        code = encode(Pose.identity(), cfg)
        code.b_tx[:] = 0.0
        code.b_tx[[2, 6]] = 0.5
        code.d_tx[:] = 0.0
        assert decode(code, cfg).t[0] == cfg.grid_x.centers[2]


class TestStabilityOrder:
    def test_left_delta_error_passes_through(self, cfg):
        # perturbing the winning delta by a left rotation perturbs the decoded
        # rotation by exactly that rotation
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = random_pose(rng)
            code = encode(p, cfg)
            delta = Rotation.from_axis_angle(rng.standard_normal(3), 0.1)
            j = int(np.argmax(code.b_rot))
            code.d_rot[j] = (delta @ Rotation(code.d_rot[j])).q
            q = decode(code, cfg)
            assert geodesic_distance(q.r, delta @ p.r) < 1e-9

    def test_right_composition_would_amplify(self, cfg):
        # counterexample: under the alternative R = Rhat * d convention the
        # decoded error becomes Rhat delta Rhat^-1 != delta
        rhat = Rotation.from_axis_angle((0, 0, 1), np.pi / 2)
        delta = Rotation.from_axis_angle((1, 0, 0), 0.1)
        conjugated = rhat @ delta @ rhat.inverse()
        assert geodesic_distance(conjugated, delta) > 0.05


class TestTopK:
    def test_k1_equals_decode(self, cfg):
        rng = np.random.default_rng(7)
        p = random_pose(rng)
        code = encode(p, cfg)
        (hyp,) = top_k_hypotheses(code, cfg, 1)
        q = decode(code, cfg)
        assert geodesic_distance(hyp.pose.r, q.r) < 1e-12
        assert np.array_equal(hyp.pose.t, q.t)
        assert hyp.ranks == (0, 0, 0, 0)

    def test_k3_gives_81(self, cfg):
        rng = np.random.default_rng(8)
        code = encode(random_pose(rng), cfg)
        hyps = top_k_hypotheses(code, cfg, 3)
        assert len(hyps) == 81

    def test_scores_non_increasing_and_tie_ordered(self, cfg):
        rng = np.random.default_rng(9)
        code = encode(random_pose(rng), cfg)
        hyps = top_k_hypotheses(code, cfg, 3)
        for a, b in zip(hyps, hyps[1:]):
            assert a.score >= b.score
            if a.score == b.score:
                assert a.ranks < b.ranks

    def test_k_clamps_to_support(self, cfg):
        # encoded codes support k_rot=4 rotations but only k_axis=3 per axis
        rng = np.random.default_rng(10)
        code = encode(random_pose(rng), cfg)
        hyps = top_k_hypotheses(code, cfg, 4)
        assert len(hyps) == 4 * 27

    def test_nested_hypothesis_sets(self, cfg):
        rng = np.random.default_rng(11)
        code = encode(random_pose(rng), cfg)
        small = {h.ranks for h in top_k_hypotheses(code, cfg, 2)}
        large = {h.ranks for h in top_k_hypotheses(code, cfg, 3)}
        assert small < large

    def test_all_hypotheses_distinct_under_distinct_deltas(self, cfg):
        rng = np.random.default_rng(12)
        code = encode(random_pose(rng), cfg)
        # make per-bin deltas distinct, as a noisy predictor would
        for b, d in code.axis_arrays():
            for i in np.nonzero(b)[0]:
                d[i] += rng.normal(0, 0.001)
        for i in np.nonzero(code.b_rot)[0]:
            wobble = Rotation.from_axis_angle(rng.standard_normal(3), 0.01)
            code.d_rot[i] = (wobble @ Rotation(code.d_rot[i])).q
        hyps = top_k_hypotheses(code, cfg, 3)
        keys = {(tuple(np.round(h.pose.r.q, 12)), tuple(np.round(h.pose.t, 12)))
                for h in hyps}
        assert len(keys) == len(hyps)

    def test_score_is_product_of_confidences(self, cfg):
        rng = np.random.default_rng(13)
        code = encode(random_pose(rng), cfg)
        hyps = top_k_hypotheses(code, cfg, 2)
        top = hyps[0]
        assert top.score == pytest.approx(0.7 ** 4, abs=1e-12)
