"""One-pass evaluation and the standard overlap/precision metrics.

AO is mean IoU. SR is the fraction of frames at or above an overlap
threshold. SS and PS are the areas under the success and precision curves,
taken as plain means over the conventional 101-point overlap grid and the
0..50 pixel grid. Dataset numbers average per-video numbers.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import iou
from .trackers import TrackRun
from .video import Video

SUCCESS_GRID = np.arange(101) / 100.0
PRECISION_GRID = np.arange(51).astype(float)
SUMMARY_HEADER = "tracker,dataset,ao,sr50,sr75,ss,ps"


def _checked(values: Sequence[float], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError(f"empty {what} array")
    return arr


def ao(ious: Sequence[float]) -> float:
    return float(np.mean(_checked(ious, "overlap")))


def sr(ious: Sequence[float], thr: float) -> float:
    arr = _checked(ious, "overlap")
    return float(np.mean(arr >= thr))


def success_auc(ious: Sequence[float]) -> float:
    arr = _checked(ious, "overlap")
    return float(np.mean([np.mean(arr >= t) for t in SUCCESS_GRID]))


def precision_auc(center_errors: Sequence[float]) -> float:
    arr = _checked(center_errors, "center-error")
    return float(np.mean([np.mean(arr <= t) for t in PRECISION_GRID]))


def precision_at(center_errors: Sequence[float], px: float = 20.0) -> float:
    arr = _checked(center_errors, "center-error")
    return float(np.mean(arr <= px))


def success_curve(ious: Sequence[float]) -> np.ndarray:
    arr = _checked(ious, "overlap")
    return np.array([np.mean(arr >= t) for t in SUCCESS_GRID])


def precision_curve(center_errors: Sequence[float]) -> np.ndarray:
    arr = _checked(center_errors, "center-error")
    return np.array([np.mean(arr <= t) for t in PRECISION_GRID])


@dataclass
class VideoMetrics:
    ious: np.ndarray
    center_errors: np.ndarray

    @property
    def summary(self) -> Dict[str, float]:
        return {
            "ao": ao(self.ious),
            "sr50": sr(self.ious, 0.50),
            "sr75": sr(self.ious, 0.75),
            "ss": success_auc(self.ious),
            "ps": precision_auc(self.center_errors),
            "precision20": precision_at(self.center_errors),
            "frames": int(self.ious.size),
        }


@dataclass
class EvalResult:
    tracker: str
    dataset: str
    per_video: Dict[str, VideoMetrics]
    excluded: List[str] = field(default_factory=list)

    def _avg(self, fn: Callable[[VideoMetrics], float]) -> float:
        return float(np.mean([fn(v) for v in self.per_video.values()]))

    @property
    def ao(self) -> float:
        return self._avg(lambda v: ao(v.ious))

    @property
    def sr50(self) -> float:
        return self._avg(lambda v: sr(v.ious, 0.50))

    @property
    def sr75(self) -> float:
        return self._avg(lambda v: sr(v.ious, 0.75))

    @property
    def ss(self) -> float:
        return self._avg(lambda v: success_auc(v.ious))

    @property
    def ps(self) -> float:
        return self._avg(lambda v: precision_auc(v.center_errors))

    @property
    def precision20(self) -> float:
        return self._avg(lambda v: precision_at(v.center_errors))

    def success_curve(self) -> np.ndarray:
        return np.mean([success_curve(v.ious) for v in self.per_video.values()], axis=0)

    def precision_curve(self) -> np.ndarray:
        return np.mean(
            [precision_curve(v.center_errors) for v in self.per_video.values()], axis=0
        )


def run_metrics(run: TrackRun, video: Video) -> VideoMetrics:
    """Per-frame IoU and center error of a completed run against annotation."""
    if len(run.boxes) != len(video.frames) - 1:
        raise InvalidInputError(
            f"run over {video.video_id!r} has {len(run.boxes)} boxes for "
            f"{len(video.frames)} frames"
        )
    ious = np.array(
        [iou(b, video.ground_truth[t + 1]) for t, b in enumerate(run.boxes)]
    )
    errors = np.array(
        [b.center_distance(video.ground_truth[t + 1]) for t, b in enumerate(run.boxes)]
    )
    return VideoMetrics(ious=ious, center_errors=errors)


def ope_run(
    tracker: Callable[[Video], TrackRun],
    dataset: Sequence[Video],
    tracker_id: str,
    dataset_id: str = "dataset",
) -> EvalResult:
    """One pass per video from its first annotation, no re-initialization.

    A partial (aborted) run excludes its video from aggregation with a
    warning rather than failing the whole evaluation.
    """
    if not dataset:
        raise InvalidInputError("dataset is empty")
    result = EvalResult(tracker=tracker_id, dataset=dataset_id, per_video={})
    for video in sorted(dataset, key=lambda v: v.video_id):
        run = tracker(video)
        if run.partial:
            warnings.warn(
                f"{tracker_id} aborted on {video.video_id!r}: {run.error}; excluded"
            )
            result.excluded.append(video.video_id)
            continue
        result.per_video[video.video_id] = run_metrics(run, video)
    if not result.per_video:
        raise InvalidInputError(f"{tracker_id}: no videos completed")
    return result


def report(results: Sequence[EvalResult], out_dir: str) -> None:
    """summary.csv plus, per result, a per-video JSON and two plot CSVs.

    Plot files are headerless "threshold,value" rows: 101 for success,
    51 for precision.
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for r in results:
            fh.write(
                f"{r.tracker},{r.dataset},{r.ao:.6f},{r.sr50:.6f},"
                f"{r.sr75:.6f},{r.ss:.6f},{r.ps:.6f}\n"
            )
    for r in results:
        stem = f"{r.tracker}_{r.dataset}"
        payload = {
            "tracker": r.tracker,
            "dataset": r.dataset,
            "aggregate": {
                "ao": r.ao,
                "sr50": r.sr50,
                "sr75": r.sr75,
                "ss": r.ss,
                "ps": r.ps,
                "precision20": r.precision20,
            },
            "excluded": list(r.excluded),
            "videos": {vid: m.summary for vid, m in sorted(r.per_video.items())},
        }
        with open(os.path.join(out_dir, f"{stem}_videos.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        s_curve = r.success_curve()
        with open(os.path.join(out_dir, f"{stem}_success.csv"), "w") as fh:
            for t, v in zip(SUCCESS_GRID, s_curve):
                fh.write(f"{t:.2f},{v:.6f}\n")
        p_curve = r.precision_curve()
        with open(os.path.join(out_dir, f"{stem}_precision.csv"), "w") as fh:
            for t, v in zip(PRECISION_GRID, p_curve):
                fh.write(f"{t:.0f},{v:.6f}\n")
