"""Inference protocols for a trained student.

tras runs the policy alone. trast pairs it with one teacher and hands control
to whichever the value head trusts more, frame by frame. trasfust runs a pool
of teachers and uses the value head purely as a judge, emitting the box of
the highest-valued teacher each frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, ParseError, TeacherError
from .geometry import Box, apply_action, iou
from .mdp import make_state
from .model import HiddenSchedule, StudentModel
from .teachers import TeacherFactory
from .video import Video

STUDENT = "student"
VALUE_EVALUATOR = "value"
ORACLE_EVALUATOR = "oracle"


@dataclass
class TrackRun:
    """One tracker's pass over one video, frames 1..T-1."""

    video_id: str
    tracker: str
    boxes: List[Box]
    controllers: List[str]
    v_student: List[Optional[float]] = field(default_factory=list)
    v_teachers: Dict[str, List[Optional[float]]] = field(default_factory=dict)
    partial: bool = False
    error: Optional[str] = None

    def teacher_ids(self) -> List[str]:
        return list(self.v_teachers)


class _Lane:
    """One recurrent evaluation chain with the standard periodic reset."""

    def __init__(self, model: StudentModel, params: np.ndarray, context: float):
        self.model = model
        self.params = params
        self.context = context
        self.sched = HiddenSchedule(model)

    def step(self, frame_prev, frame_cur, anchor: Box, t: int):
        state = make_state(
            frame_prev, frame_cur, anchor, self.context, self.model.config.patch_size
        )
        hidden = self.sched.before(t)
        out, hidden = self.model.forward(self.params, state, hidden)
        self.sched.after(t, hidden)
        return out


def tras(
    video: Video,
    g0: Box,
    model: StudentModel,
    params: np.ndarray,
    context: float = 1.5,
) -> TrackRun:
    """Pure student: the mean action drives the box chain deterministically."""
    lane = _Lane(model, params, context)
    box = g0
    run = TrackRun(video.video_id, "tras", boxes=[], controllers=[])
    for t in range(1, len(video.frames)):
        out = lane.step(video.frames[t - 1], video.frames[t], box, t)
        box = apply_action(out.action, box)
        run.boxes.append(box)
        run.controllers.append(STUDENT)
        run.v_student.append(out.value)
    return run


def trast(
    video: Video,
    g0: Box,
    model: StudentModel,
    params: np.ndarray,
    teacher: TeacherFactory,
    context: float = 1.5,
    evaluator: str = VALUE_EVALUATOR,
) -> TrackRun:
    """Student-teacher duo: per frame the higher-valued candidate wins, the
    student taking ties. A teacher hand-off rebases the student's next crop.

    The oracle evaluator replaces both value estimates with the candidates'
    true overlap against ground truth (testing hook; needs full annotation).
    """
    if evaluator not in (VALUE_EVALUATOR, ORACLE_EVALUATOR):
        raise InvalidInputError(f"unknown evaluator {evaluator!r}")
    if evaluator == ORACLE_EVALUATOR and len(video.ground_truth) != len(video.frames):
        raise InvalidInputError("oracle evaluator needs ground truth on every frame")
    student_lane = _Lane(model, params, context)
    teacher_lane = _Lane(model, params, context)
    tid = teacher.teacher_id
    run = TrackRun(
        video.video_id, "trast", boxes=[], controllers=[], v_teachers={tid: []}
    )
    box = g0
    teacher_box = g0
    try:
        with teacher.session(video) as session:
            session.init(video.frames[0], g0)
            for t in range(1, len(video.frames)):
                prev_teacher_box = teacher_box
                try:
                    teacher_box = session.predict(video.frames[t])
                except TeacherError as exc:
                    run.partial = True
                    run.error = str(exc)
                    return run
                out = student_lane.step(video.frames[t - 1], video.frames[t], box, t)
                student_box = apply_action(out.action, box)
                if evaluator == ORACLE_EVALUATOR:
                    gt = video.ground_truth[t]
                    v_s = iou(student_box, gt)
                    v_t = iou(teacher_box, gt)
                else:
                    v_s = out.value
                    t_out = teacher_lane.step(
                        video.frames[t - 1], video.frames[t], prev_teacher_box, t
                    )
                    v_t = t_out.value
                if v_s >= v_t:
                    box = student_box
                    run.controllers.append(STUDENT)
                else:
                    box = teacher_box
                    run.controllers.append(tid)
                run.boxes.append(box)
                run.v_student.append(v_s)
                run.v_teachers[tid].append(v_t)
    except TeacherError as exc:
        run.partial = True
        run.error = str(exc)
    return run


def trasfust(
    video: Video,
    g0: Box,
    model: StudentModel,
    params: np.ndarray,
    pool: Sequence[TeacherFactory],
    context: float = 1.5,
    evaluator: str = VALUE_EVALUATOR,
) -> TrackRun:
    """Teacher fusion: every pool member tracks its own chain; each frame the
    student's value head picks the box of the highest-valued teacher. Ties go
    to the lowest pool index. The student predicts no boxes of its own."""
    if not pool:
        raise InvalidInputError("teacher pool must be non-empty")
    if evaluator not in (VALUE_EVALUATOR, ORACLE_EVALUATOR):
        raise InvalidInputError(f"unknown evaluator {evaluator!r}")
    if evaluator == ORACLE_EVALUATOR and len(video.ground_truth) != len(video.frames):
        raise InvalidInputError("oracle evaluator needs ground truth on every frame")
    ids = [f.teacher_id for f in pool]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("teacher pool has duplicate ids")
    run = TrackRun(
        video.video_id,
        "trasfust",
        boxes=[],
        controllers=[],
        v_teachers={tid: [] for tid in ids},
    )
    lanes = [_Lane(model, params, context) for _ in pool]
    sessions = []
    try:
        for factory in pool:
            sessions.append(factory.session(video))
            sessions[-1].init(video.frames[0], g0)
        prev_boxes = [g0 for _ in pool]
        for t in range(1, len(video.frames)):
            values = np.empty(len(pool))
            cur_boxes = []
            for k, session in enumerate(sessions):
                b = session.predict(video.frames[t])
                cur_boxes.append(b)
                if evaluator == ORACLE_EVALUATOR:
                    values[k] = iou(b, video.ground_truth[t])
                else:
                    out = lanes[k].step(
                        video.frames[t - 1], video.frames[t], prev_boxes[k], t
                    )
                    values[k] = out.value
            best = int(np.argmax(values))  # argmax takes the first maximum
            run.boxes.append(cur_boxes[best])
            run.controllers.append(ids[best])
            for k, tid in enumerate(ids):
                run.v_teachers[tid].append(float(values[k]))
            prev_boxes = cur_boxes
    except TeacherError as exc:
        run.partial = True
        run.error = str(exc)
    finally:
        for session in sessions:
            session.close()
    return run


# -- serialization -------------------------------------------------------------


def write_trackrun(path: str, run: TrackRun) -> None:
    """CSV with one row per predicted frame; value columns empty where a
    value was never computed."""
    tids = run.teacher_ids()
    header = ["t", "x", "y", "w", "h", "controller", "v_student"]
    header += [f"v_{tid}" for tid in tids]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, box in enumerate(run.boxes):
            row = [
                str(i + 1),
                f"{box.x:.6f}",
                f"{box.y:.6f}",
                f"{box.w:.6f}",
                f"{box.h:.6f}",
                run.controllers[i],
            ]
            v = run.v_student[i] if i < len(run.v_student) else None
            row.append("" if v is None else f"{v:.6f}")
            for tid in tids:
                tv = run.v_teachers[tid][i]
                row.append("" if tv is None else f"{tv:.6f}")
            writer.writerow(row)


def read_trackrun(path: str, video_id: str = "", tracker: str = "") -> TrackRun:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty track file")
        if header[:7] != ["t", "x", "y", "w", "h", "controller", "v_student"]:
            raise ParseError(f"{path}: unrecognized track header {header!r}")
        tids = [h[2:] for h in header[7:]]
        run = TrackRun(
            video_id,
            tracker,
            boxes=[],
            controllers=[],
            v_teachers={tid: [] for tid in tids},
        )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                x, y, w, h = (float(v) for v in row[1:5])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad box values")
            run.boxes.append(Box(x, y, w, h))
            run.controllers.append(row[5])
            run.v_student.append(float(row[6]) if row[6] else None)
            for tid, cell in zip(tids, row[7:]):
                run.v_teachers[tid].append(float(cell) if cell else None)
    return run
