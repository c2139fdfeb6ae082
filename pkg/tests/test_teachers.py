"""Teacher sessions: noisy oracles, trace replay, the external wire protocol."""

import sys

import numpy as np
import pytest

from trackdistill.errors import InvalidInputError, ProtocolError, TeacherError
from trackdistill.geometry import Box, iou
from trackdistill.teachers import (
    ExternalFactory,
    OracleNoiseFactory,
    TraceFactory,
    TrajectoryTrace,
    best_teacher,
    calibrate_noise,
    load_trace,
    parse_teacher_spec,
    run_teacher_on_video,
    save_trace,
    teacher_action,
)
from trackdistill.video import SyntheticSpec, Video, generate_video


def gt_only_video(video_id, n, rng):
    """A video whose frames are all the same tiny array; only ground truth matters."""
    frame = np.zeros((8, 8, 3), dtype=np.uint8)
    boxes = [
        Box(float(rng.uniform(0, 60)), float(rng.uniform(0, 60)),
            float(rng.uniform(10, 50)), float(rng.uniform(10, 50)))
        for _ in range(n)
    ]
    return Video(video_id, [frame] * n, boxes)


class TestBestTeacher:
    def test_examples(self):
        g = Box(0, 0, 10, 10)
        pool = [Box(0, 0, 10, 3), Box(0, 0, 10, 9), Box(0, 0, 10, 7)]
        assert best_teacher(pool, g) == 1
        assert best_teacher([Box(0, 0, 10, 9), Box(0, 0, 10, 9)], g) == 0
        assert best_teacher([Box(0, 0, 10, 3)], g) == 0

    def test_empty_pool_rejected(self):
        with pytest.raises(InvalidInputError):
            best_teacher([], Box(0, 0, 10, 10))

    def test_argmax_property(self):
        rng = np.random.default_rng(61)
        for _ in range(200):
            g = Box(*rng.uniform(0, 30, 2), *rng.uniform(5, 20, 2))
            pool = [
                Box(*rng.uniform(0, 30, 2), *rng.uniform(5, 20, 2))
                for _ in range(rng.integers(1, 8))
            ]
            k = best_teacher(pool, g)
            winner = iou(pool[k], g)
            for j, p in enumerate(pool):
                assert winner >= iou(p, g)
                if j < k:
                    assert iou(p, g) < winner  # earlier index would have won a tie


class TestTeacherAction:
    def test_zero_when_equal(self):
        b = Box(5, 5, 20, 10)
        np.testing.assert_allclose(teacher_action(b, b), np.zeros(4), atol=1e-12)

    def test_hand_pair(self):
        a = teacher_action(Box(7, 13, 30, 8), Box(10, 10, 20, 10))
        np.testing.assert_allclose(a, [0.1, 0.2, 0.5, -0.2], atol=1e-12)

    def test_far_box_clamped(self):
        a = teacher_action(Box(500, 500, 5, 5), Box(0, 0, 10, 10))
        assert np.all(np.abs(a) <= 1.0)


class TestOracleNoise:
    def test_zero_noise_returns_ground_truth(self):
        rng = np.random.default_rng(71)
        vid = gt_only_video("v0", 20, rng)
        factory = OracleNoiseFactory("perfect", target_iou=1.0, seed=3)
        sess = factory.session(vid)
        sess.init(vid.frames[0], vid.ground_truth[0])
        for t in range(1, 20):
            assert sess.predict(vid.frames[t]) == vid.ground_truth[t]

    @pytest.mark.parametrize("target", [0.6, 0.8, 0.9])
    def test_calibrated_mean_overlap(self, target):
        rng = np.random.default_rng(72)
        vid = gt_only_video("vcal", 1001, rng)
        factory = OracleNoiseFactory("noisy", target_iou=target, seed=5)
        sess = factory.session(vid)
        sess.init(vid.frames[0], vid.ground_truth[0])
        vals = [
            iou(sess.predict(vid.frames[t]), vid.ground_truth[t]) for t in range(1, 1001)
        ]
        assert target - 0.05 <= float(np.mean(vals)) <= target + 0.05

    def test_deterministic_per_seed_and_video(self):
        rng = np.random.default_rng(73)
        vid = gt_only_video("vdet", 30, rng)
        runs = []
        for _ in range(2):
            factory = OracleNoiseFactory("o", target_iou=0.7, seed=11)
            runs.append([b.as_array() for b in run_teacher_on_video(factory, vid).boxes])
        np.testing.assert_array_equal(np.array(runs[0]), np.array(runs[1]))

    def test_videos_get_independent_noise(self):
        rng = np.random.default_rng(74)
        va = gt_only_video("va", 10, rng)
        vb = Video("vb", va.frames, va.ground_truth)
        factory = OracleNoiseFactory("o", target_iou=0.7, seed=11)
        ta = run_teacher_on_video(factory, va)
        tb = run_teacher_on_video(factory, vb)
        assert any(x != y for x, y in zip(ta.boxes[1:], tb.boxes[1:]))

    def test_calibration_monotone(self):
        k6 = calibrate_noise(0.6, seed=1)
        k8 = calibrate_noise(0.8, seed=1)
        k10 = calibrate_noise(1.0, seed=1)
        assert k6 > k8 > k10 == 0.0

    def test_unreachable_target_rejected(self):
        with pytest.raises(InvalidInputError):
            calibrate_noise(0.1, seed=1)


class TestTraceTeacher:
    def test_save_load_replay(self, tmp_path):
        rng = np.random.default_rng(81)
        vid = gt_only_video("seq", 12, rng)
        src = OracleNoiseFactory("o8", target_iou=0.8, seed=2)
        trace = run_teacher_on_video(src, vid)
        save_trace(str(tmp_path), trace)

        back = load_trace(str(tmp_path), "o8", "seq")
        assert back.video_id == "seq"
        replay = TraceFactory("o8", str(tmp_path))
        boxes = run_teacher_on_video(replay, vid).boxes
        for a, b in zip(boxes[1:], trace.boxes[1:]):
            np.testing.assert_allclose(a.as_array(), b.as_array(), atol=1e-5)

    def test_replay_is_pure(self, tmp_path):
        rng = np.random.default_rng(82)
        vid = gt_only_video("seq", 8, rng)
        save_trace(str(tmp_path), run_teacher_on_video(
            OracleNoiseFactory("t", 0.7, seed=4), vid))
        replay = TraceFactory("t", str(tmp_path))
        one = run_teacher_on_video(replay, vid).boxes
        two = run_teacher_on_video(replay, vid).boxes
        assert one == two

    def test_missing_trace_errors_with_id(self, tmp_path):
        rng = np.random.default_rng(83)
        vid = gt_only_video("seq", 4, rng)
        with pytest.raises(TeacherError, match="ghost"):
            TraceFactory("ghost", str(tmp_path)).session(vid)

    def test_length_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(84)
        vid = gt_only_video("seq", 6, rng)
        save_trace(str(tmp_path), TrajectoryTrace("seq", "t", vid.ground_truth[:4]))
        with pytest.raises(TeacherError, match="4 boxes"):
            TraceFactory("t", str(tmp_path)).session(vid)


class TestSessionProtocol:
    def test_double_init(self):
        rng = np.random.default_rng(91)
        vid = gt_only_video("v", 4, rng)
        sess = OracleNoiseFactory("o", 0.9, 1).session(vid)
        sess.init(vid.frames[0], vid.ground_truth[0])
        with pytest.raises(ProtocolError):
            sess.init(vid.frames[0], vid.ground_truth[0])

    def test_predict_before_init(self):
        rng = np.random.default_rng(92)
        vid = gt_only_video("v", 4, rng)
        sess = OracleNoiseFactory("o", 0.9, 1).session(vid)
        with pytest.raises(ProtocolError):
            sess.predict(vid.frames[1])


ECHO_TEACHER = r"""
import json, os, sys
box = None
for line in sys.stdin:
    msg = json.loads(line)
    assert os.path.exists(msg["frame"])
    if msg["cmd"] == "init":
        box = msg["box"]
        print(json.dumps({"ok": True}), flush=True)
    else:
        box = [box[0] + 1.0, box[1], box[2], box[3]]
        print(json.dumps({"box": box}), flush=True)
"""


class TestExternalTeacher:
    def make_factory(self, tmp_path, body, **kw):
        script = tmp_path / "teacher.py"
        script.write_text(body)
        return ExternalFactory("ext", f"{sys.executable} {script}", **kw)

    def test_wire_round_trip(self, tmp_path):
        vid = generate_video(SyntheticSpec(num_frames=5, width=48, height=48, max_size=20), 1, "wire")
        factory = self.make_factory(tmp_path, ECHO_TEACHER)
        trace = run_teacher_on_video(factory, vid)
        g0 = vid.ground_truth[0]
        # the echo teacher drifts +1 px per frame from g0
        for t in range(1, 5):
            np.testing.assert_allclose(
                trace.boxes[t].as_array(),
                [g0.x + t, g0.y, g0.w, g0.h],
                atol=1e-9,
            )

    def test_malformed_reply(self, tmp_path):
        body = "import sys\nfor line in sys.stdin:\n    print('not json', flush=True)\n"
        vid = generate_video(SyntheticSpec(num_frames=3, width=48, height=48, max_size=20), 2, "bad")
        with pytest.raises(TeacherError, match="ext"):
            run_teacher_on_video(self.make_factory(tmp_path, body), vid)

    def test_timeout(self, tmp_path):
        body = "import sys, time\nsys.stdin.readline()\ntime.sleep(30)\n"
        vid = generate_video(SyntheticSpec(num_frames=3, width=48, height=48, max_size=20), 3, "slow")
        with pytest.raises(TeacherError, match="no reply"):
            run_teacher_on_video(self.make_factory(tmp_path, body, timeout=0.3), vid)

    def test_early_exit(self, tmp_path):
        vid = generate_video(SyntheticSpec(num_frames=3, width=48, height=48, max_size=20), 4, "dead")
        with pytest.raises(TeacherError):
            run_teacher_on_video(self.make_factory(tmp_path, "import sys; sys.exit(0)\n"), vid)


class TestTeacherSpecParsing:
    def test_oracle_forms(self):
        f = parse_teacher_spec("oracle:0.8")
        assert f.teacher_id == "oracle0.8" and f.target_iou == 0.8
        f = parse_teacher_spec("oracle:0.9:7")
        assert f.seed == 7
        f = parse_teacher_spec("good=oracle:0.9")
        assert f.teacher_id == "good"

    def test_trace_form(self, tmp_path):
        f = parse_teacher_spec(f"trace:{tmp_path}:kcfish")
        assert isinstance(f, TraceFactory) and f.teacher_id == "kcfish"

    def test_extern_form(self):
        f = parse_teacher_spec("extern:mytracker:python3 run.py --flag")
        assert isinstance(f, ExternalFactory)
        assert f.command == "python3 run.py --flag"

    def test_bad_specs(self):
        for s in ("oracle", "oracle:x", "trace:only_dir", "warp:1", ""):
            with pytest.raises(InvalidInputError):
                parse_teacher_spec(s)
