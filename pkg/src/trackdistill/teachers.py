"""Teacher trackers: noisy oracles, trace replay, external processes.

A teacher session is bound to one video, primed with the first frame and
ground-truth box, then fed frames in temporal order, producing one box per
frame. Factories build fresh sessions per video so pools can be replayed
deterministically across passes.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import tempfile
import threading
import zlib
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, ProtocolError, TeacherError
from .geometry import MIN_SIDE, Box, infer_action, iou
from .video import Video, read_groundtruth, write_groundtruth, write_ppm

# Relative perturbation cap: scale factors stay in [0.2, 1.8] at kappa = 1.6.
_SCALE_FLOOR = 0.2
_KAPPA_MAX = 1.6
WIRE_TIMEOUT = 5.0


def teacher_action(teacher_box: Box, prev: Box) -> np.ndarray:
    """The clamped relative motion a teacher's box implies from the previous box."""
    return infer_action(teacher_box, prev)


def best_teacher(predictions: Sequence[Box], gt: Box) -> int:
    """Index of the prediction with the highest overlap; ties go to the lowest index."""
    if len(predictions) == 0:
        raise InvalidInputError("best_teacher on an empty pool")
    ious = np.array([iou(p, gt) for p in predictions])
    return int(np.argmax(ious))


@dataclass
class TrajectoryTrace:
    """Per-frame box predictions of one teacher over one video."""

    video_id: str
    teacher_id: str
    boxes: List[Box]


class TeacherSession:
    """Base session: init-once then predict per frame, in order."""

    def __init__(self, teacher_id: str, video_id: str):
        self.teacher_id = teacher_id
        self.video_id = video_id
        self.box = None  # the teacher's latest output
        self._initialized = False
        self._t = 0

    def init(self, frame0: np.ndarray, g0: Box) -> None:
        if self._initialized:
            raise ProtocolError(f"teacher {self.teacher_id!r}: double init")
        self._initialized = True
        self._t = 0
        self.box = g0
        self._on_init(frame0, g0)

    def predict(self, frame: np.ndarray) -> Box:
        if not self._initialized:
            raise ProtocolError(f"teacher {self.teacher_id!r}: predict before init")
        self._t += 1
        self.box = self._predict(frame, self._t)
        return self.box

    def close(self) -> None:
        pass

    def _on_init(self, frame0: np.ndarray, g0: Box) -> None:
        pass

    def _predict(self, frame: np.ndarray, t: int) -> Box:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TeacherFactory:
    """Builds one session per video; subclasses define the teacher behavior."""

    def __init__(self, teacher_id: str):
        if not teacher_id or "/" in teacher_id:
            raise InvalidInputError(f"bad teacher id {teacher_id!r}")
        self.teacher_id = teacher_id

    def session(self, video: Video) -> TeacherSession:
        raise NotImplementedError


def _video_seed(base_seed: int, video_id: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(base_seed), zlib.crc32(video_id.encode("utf-8"))])
    )


def _unit_mean_iou(kappa: float, noise: np.ndarray) -> float:
    # Mean overlap of a unit box against its perturbed copy; overlap is
    # invariant under per-axis affine scaling, so this models every box size.
    cx = 0.5 + noise[:, 0] * kappa
    cy = 0.5 + noise[:, 1] * kappa
    w = np.maximum(_SCALE_FLOOR, 1.0 + noise[:, 2] * kappa * 0.5)
    h = np.maximum(_SCALE_FLOOR, 1.0 + noise[:, 3] * kappa * 0.5)
    ix = np.clip(np.minimum(cx + w / 2, 1.0) - np.maximum(cx - w / 2, 0.0), 0.0, None)
    iy = np.clip(np.minimum(cy + h / 2, 1.0) - np.maximum(cy - h / 2, 0.0), 0.0, None)
    inter = ix * iy
    return float(np.mean(inter / (1.0 + w * h - inter)))


def calibrate_noise(target_iou: float, seed: int, samples: int = 4000) -> float:
    """Perturbation magnitude whose mean overlap hits ``target_iou``, by bisection."""
    if not (0.3 <= target_iou <= 1.0):
        raise InvalidInputError(f"target overlap {target_iou} outside [0.3, 1.0]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCA11B]))
    noise = rng.uniform(-1.0, 1.0, (samples, 4))
    if target_iou >= 1.0:
        return 0.0
    lo, hi = 0.0, _KAPPA_MAX
    if _unit_mean_iou(hi, noise) > target_iou:
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _unit_mean_iou(mid, noise) > target_iou:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class OracleNoiseSession(TeacherSession):
    """Ground truth with calibrated relative jitter; quality dialed by target overlap."""

    def __init__(self, teacher_id: str, video: Video, kappa: float, rng: np.random.Generator):
        super().__init__(teacher_id, video.video_id)
        self._gt = video.ground_truth
        self._kappa = kappa
        self._rng = rng

    def _predict(self, frame: np.ndarray, t: int) -> Box:
        if t >= len(self._gt):
            raise ProtocolError(f"teacher {self.teacher_id!r}: video exhausted at step {t}")
        g = self._gt[t]
        if self._kappa == 0.0:
            return g
        e = self._rng.uniform(-1.0, 1.0, 4)
        cx = g.cx + e[0] * self._kappa * g.w
        cy = g.cy + e[1] * self._kappa * g.h
        w = max(g.w * max(_SCALE_FLOOR, 1.0 + e[2] * self._kappa * 0.5), MIN_SIDE)
        h = max(g.h * max(_SCALE_FLOOR, 1.0 + e[3] * self._kappa * 0.5), MIN_SIDE)
        return Box(cx - w / 2, cy - h / 2, w, h)


class OracleNoiseFactory(TeacherFactory):
    def __init__(self, teacher_id: str, target_iou: float, seed: int = 0):
        super().__init__(teacher_id)
        self.target_iou = float(target_iou)
        self.seed = int(seed)
        self.kappa = calibrate_noise(self.target_iou, self.seed)

    def session(self, video: Video) -> OracleNoiseSession:
        return OracleNoiseSession(
            self.teacher_id, video, self.kappa, _video_seed(self.seed, video.video_id)
        )


class TraceSession(TeacherSession):
    """Replays a stored trajectory verbatim."""

    def __init__(self, teacher_id: str, video_id: str, boxes: List[Box]):
        super().__init__(teacher_id, video_id)
        self._boxes = boxes

    def _predict(self, frame: np.ndarray, t: int) -> Box:
        if t >= len(self._boxes):
            raise ProtocolError(
                f"teacher {self.teacher_id!r}: trace exhausted at step {t}"
            )
        return self._boxes[t]


class TraceFactory(TeacherFactory):
    def __init__(self, teacher_id: str, trace_root: str):
        super().__init__(teacher_id)
        self.trace_root = trace_root

    def session(self, video: Video) -> TraceSession:
        trace = load_trace(self.trace_root, self.teacher_id, video.video_id)
        if len(trace.boxes) != len(video):
            raise TeacherError(
                self.teacher_id,
                f"trace for {video.video_id!r} has {len(trace.boxes)} boxes, "
                f"video has {len(video)} frames",
            )
        return TraceSession(self.teacher_id, video.video_id, trace.boxes)


class ExternalSession(TeacherSession):
    """Drives a child process over the line-JSON wire protocol.

    Frames are handed over as file paths; in-memory videos are spilled to a
    temporary directory. Any malformed reply, timeout, or early exit raises
    TeacherError carrying the teacher id.
    """

    def __init__(self, teacher_id: str, video: Video, command: str, timeout: float = WIRE_TIMEOUT):
        super().__init__(teacher_id, video.video_id)
        self._video = video
        self._timeout = timeout
        self._tmpdir: Optional[tempfile.TemporaryDirectory] = None
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise TeacherError(teacher_id, f"cannot start {command!r}: {e}")
        self._replies: "queue.Queue[Optional[str]]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._replies.put(line)
        self._replies.put(None)

    def _frame_path(self, t: int) -> str:
        if self._video.frame_paths is not None:
            return self._video.frame_paths[t]
        if self._tmpdir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="teacher_frames_")
        path = os.path.join(self._tmpdir.name, "%06d.ppm" % t)
        if not os.path.exists(path):
            write_ppm(path, self._video.frames[t])
        return path

    def _roundtrip(self, msg: dict) -> dict:
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as e:
            raise TeacherError(self.teacher_id, f"write failed: {e}")
        try:
            line = self._replies.get(timeout=self._timeout)
        except queue.Empty:
            raise TeacherError(self.teacher_id, f"no reply within {self._timeout:.1f}s")
        if line is None:
            raise TeacherError(self.teacher_id, "process closed its output stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise TeacherError(self.teacher_id, f"malformed reply {line!r}")
        if not isinstance(reply, dict):
            raise TeacherError(self.teacher_id, f"malformed reply {line!r}")
        return reply

    def _on_init(self, frame0: np.ndarray, g0: Box) -> None:
        reply = self._roundtrip(
            {
                "cmd": "init",
                "video": self.video_id,
                "box": [g0.x, g0.y, g0.w, g0.h],
                "frame": self._frame_path(0),
            }
        )
        if reply.get("ok") is not True:
            raise TeacherError(self.teacher_id, f"init not acknowledged: {reply!r}")

    def _predict(self, frame: np.ndarray, t: int) -> Box:
        reply = self._roundtrip({"cmd": "predict", "frame": self._frame_path(t)})
        box = reply.get("box")
        if not (isinstance(box, list) and len(box) == 4):
            raise TeacherError(self.teacher_id, f"bad predict reply: {reply!r}")
        try:
            return Box(*(float(v) for v in box))
        except (TypeError, ValueError, InvalidInputError) as e:
            raise TeacherError(self.teacher_id, f"bad box in reply: {e}")

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None


class ExternalFactory(TeacherFactory):
    def __init__(self, teacher_id: str, command: str, timeout: float = WIRE_TIMEOUT):
        super().__init__(teacher_id)
        self.command = command
        self.timeout = timeout

    def session(self, video: Video) -> ExternalSession:
        return ExternalSession(self.teacher_id, video, self.command, self.timeout)


def parse_teacher_spec(spec: str, default_seed: int = 0) -> TeacherFactory:
    """Build a factory from a CLI spec string.

    Forms:
        oracle:<target_iou>[:<seed>]   calibrated noisy oracle
        trace:<dir>:<teacher_id>       replay stored trajectories
        extern:<id>:<command>          external process (command may hold spaces)
    An explicit id may prefix any form as "<id>=<form>".
    """
    teacher_id = None
    if "=" in spec.split(":", 1)[0]:
        teacher_id, spec = spec.split("=", 1)
    parts = spec.split(":", 2)
    kind = parts[0]
    try:
        if kind == "oracle":
            if len(parts) < 2:
                raise InvalidInputError(f"oracle spec needs a target overlap: {spec!r}")
            target = float(parts[1])
            seed = int(parts[2]) if len(parts) > 2 else default_seed
            return OracleNoiseFactory(teacher_id or f"oracle{target:g}", target, seed)
        if kind == "trace":
            if len(parts) != 3:
                raise InvalidInputError(f"trace spec is trace:<dir>:<id>, got {spec!r}")
            return TraceFactory(teacher_id or parts[2], parts[1])
        if kind == "extern":
            if len(parts) != 3:
                raise InvalidInputError(f"extern spec is extern:<id>:<command>, got {spec!r}")
            return ExternalFactory(teacher_id or parts[1], parts[2])
    except ValueError as e:
        raise InvalidInputError(f"bad teacher spec {spec!r}: {e}")
    raise InvalidInputError(f"unknown teacher kind {kind!r} in {spec!r}")


def run_teacher_on_video(factory: TeacherFactory, video: Video) -> TrajectoryTrace:
    """Feed every frame through a fresh session; boxes[0] is the ground-truth start."""
    with factory.session(video) as session:
        session.init(video.frames[0], video.ground_truth[0])
        boxes = [video.ground_truth[0]]
        for t in range(1, len(video)):
            boxes.append(session.predict(video.frames[t]))
    return TrajectoryTrace(video.video_id, factory.teacher_id, boxes)


def trace_path(trace_root: str, teacher_id: str, video_id: str) -> str:
    return os.path.join(trace_root, teacher_id, f"{video_id}.csv")


def save_trace(trace_root: str, trace: TrajectoryTrace) -> str:
    path = trace_path(trace_root, trace.teacher_id, trace.video_id)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    write_groundtruth(path, trace.boxes)
    return path


def load_trace(trace_root: str, teacher_id: str, video_id: str) -> TrajectoryTrace:
    path = trace_path(trace_root, teacher_id, video_id)
    if not os.path.isfile(path):
        raise TeacherError(teacher_id, f"no trace file {path}")
    return TrajectoryTrace(video_id, teacher_id, read_groundtruth(path))
