"""Offline trainer: imitation and reinforcement over teacher demonstrations.

Workers roll episodes over transfer-set chunks. Distilling workers execute
their own policy and regress masked L1 toward the best teacher's action;
autonomous workers execute Gaussian samples around the policy mean (spread
set by the distance to the ground-truth action) and optimize an advantage
actor-critic objective. All workers send per-window gradients to one shared,
lock-serialized parameter store.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InvalidInputError, NumericError
from .geometry import Box, apply_action, infer_action
from .mdp import State, TrackingEpisode, reward
from .model import HiddenState, StudentModel, save_params
from .teachers import best_teacher, teacher_action
from .transferset import TransferChunk

DISTILLING = "distilling"
AUTONOMOUS = "autonomous"


# -- records -------------------------------------------------------------------


@dataclass
class StepRecord:
    """Frozen facts about one executed step; only mu/v are ever re-derived."""

    state: State
    mu: np.ndarray
    value: float
    executed: np.ndarray
    reward: float
    gt_action: np.ndarray
    log_density: Optional[float] = None
    raw: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    teacher_action: Optional[np.ndarray] = None
    mask: int = 0
    teacher_reward: float = 0.0  # the best teacher's own-chain reward at this frame


@dataclass
class EpisodeRecord:
    """One gradient window (at most t_max steps) plus its bootstrap."""

    steps: List[StepRecord]
    h0: HiddenState
    bootstrap_value: float
    terminated: bool

    def states(self) -> List[State]:
        return [s.state for s in self.steps]


# -- losses --------------------------------------------------------------------


def mask(reward_student: float, reward_teacher: float) -> int:
    """1 where the student's action earned strictly less reward than the teacher's."""
    return 1 if reward_student < reward_teacher else 0


def distill_loss(record: EpisodeRecord) -> float:
    """Masked L1 between recorded policy means and best-teacher actions."""
    total = 0.0
    for s in record.steps:
        if s.teacher_action is None:
            raise InvalidInputError("distillation loss needs teacher actions on every step")
        total += s.mask * float(np.sum(np.abs(s.teacher_action - s.mu)))
    return total


def gaussian_log_density(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> float:
    z = (x - mu) / sigma
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * sigma * sigma) + z * z))


@dataclass(frozen=True)
class ActionSample:
    action: np.ndarray  # clamped into [-1, 1]
    raw: np.ndarray
    sigma: np.ndarray
    log_density: float


def sample_action(
    mu: np.ndarray,
    gt_action: np.ndarray,
    rng: np.random.Generator,
    sigma_floor: float = 1e-3,
) -> ActionSample:
    """Gaussian exploration that shrinks as the policy approaches ground truth.

    The log density is taken at the pre-clamp sample; the executed action is
    the clamped one.
    """
    sigma = np.abs(mu - gt_action) + sigma_floor
    raw = mu + sigma * rng.standard_normal(4)
    return ActionSample(
        action=np.clip(raw, -1.0, 1.0),
        raw=raw,
        sigma=sigma,
        log_density=gaussian_log_density(raw, mu, sigma),
    )


def returns(record: EpisodeRecord, gamma: float, mode: str = "forward") -> np.ndarray:
    """Per-step value targets R_i.

    "forward": discounted reward-to-go with terminal-zero bootstrap.
    "prefix-sum": backward-looking prefix sums, R_i = sum_{k<=i} gamma^(k-1) r_k.
    """
    if not (0.0 < gamma <= 1.0):
        raise InvalidInputError(f"gamma must be in (0, 1], got {gamma}")
    r = np.array([s.reward for s in record.steps])
    n = len(r)
    if mode == "forward":
        out = np.empty(n)
        acc = 0.0 if record.terminated else record.bootstrap_value
        for i in range(n - 1, -1, -1):
            acc = r[i] + gamma * acc
            out[i] = acc
        return out
    if mode == "prefix-sum":
        weights = gamma ** np.arange(n)
        return np.cumsum(weights * r)
    raise ConfigError(f"unknown returns mode {mode!r}")


def advantages(record: EpisodeRecord, gamma: float) -> np.ndarray:
    """A_i = r_i + gamma * v(s_{i+1}) - v(s_i), all from recorded values."""
    values = [s.value for s in record.steps]
    values.append(0.0 if record.terminated else record.bootstrap_value)
    return np.array(
        [s.reward + gamma * values[i + 1] - values[i] for i, s in enumerate(record.steps)]
    )


def actor_critic_loss(
    record: EpisodeRecord, gamma: float, returns_mode: str = "forward"
) -> Tuple[float, float]:
    """(policy loss, value loss) over the recorded window.

    Advantages and value targets are constants here; this is the reporting
    view of the objective whose gradient window_loss_fn computes.
    """
    adv = advantages(record, gamma)
    loss_pi = 0.0
    for a, s in zip(adv, record.steps):
        if s.log_density is None:
            raise InvalidInputError("policy loss needs recorded log densities")
        loss_pi -= s.log_density * a
    targets = returns(record, gamma, returns_mode)
    values = np.array([s.value for s in record.steps])
    loss_v = float(np.sum(0.5 * (targets - values) ** 2))
    return float(loss_pi), loss_v


LOSS_KINDS = ("distill", "policy", "value", "combined", "rl")


def window_loss_fn(
    model: StudentModel,
    record: EpisodeRecord,
    kind: str,
    gamma: float = 1.0,
    returns_mode: str = "forward",
    rl_scale: float = 1e-3,
    weight_decay: float = 1e-4,
) -> Callable[[np.ndarray], Tuple[float, np.ndarray]]:
    """A differentiable view of one window's loss, for updates and verification.

    Everything recorded (advantages, value targets, samples, sigmas, masks) is
    held constant; only the policy mean and value are re-evaluated at the
    given parameters. "combined" is rl_scale*(policy+value) + distill +
    0.5*weight_decay*||theta||^2, the full objective a mixed update sees.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    states = record.states()
    adv = advantages(record, gamma)
    targets = returns(record, gamma, returns_mode)

    def fn(params: np.ndarray) -> Tuple[float, np.ndarray]:
        mus, values, _, caches = model.forward_window(params, states, record.h0)
        n = len(states)
        dmus = np.zeros((n, 4))
        dvalues = np.zeros(n)
        loss = 0.0
        if kind in ("distill", "combined"):
            part = 0.0
            for i, s in enumerate(record.steps):
                if s.teacher_action is None:
                    raise InvalidInputError("distill loss needs teacher actions")
                diff = mus[i] - s.teacher_action
                part += s.mask * float(np.sum(np.abs(diff)))
                dmus[i] += s.mask * np.sign(diff)
            loss += part
        if kind in ("policy", "rl", "combined"):
            part = 0.0
            scale = rl_scale if kind == "combined" else 1.0
            for i, s in enumerate(record.steps):
                if s.raw is None or s.sigma is None:
                    raise InvalidInputError("policy loss needs recorded samples")
                part -= adv[i] * gaussian_log_density(s.raw, mus[i], s.sigma)
                dmus[i] += scale * (-adv[i]) * (s.raw - mus[i]) / (s.sigma ** 2)
            loss += scale * part
        if kind in ("value", "rl", "combined"):
            scale = rl_scale if kind == "combined" else 1.0
            diff = values - targets
            loss += scale * float(np.sum(0.5 * diff * diff))
            dvalues += scale * diff
        grad = model.backward_window(params, caches, dmus, dvalues)
        if kind == "combined" and weight_decay:
            loss += 0.5 * weight_decay * float(params @ params)
            grad = grad + weight_decay * params
        if not math.isfinite(loss):
            raise NumericError(f"non-finite {kind} loss over a {n}-step window")
        return float(loss), grad

    return fn


# -- optimizer and shared store ------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "radam"  # "radam" | "adam" | "sgd"
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4  # decoupled, distillation updates only
    rl_scale: float = 1e-3  # pre-scales autonomous gradients
    grad_clip: float = 0.0  # max L2 norm, 0 disables

    def validate(self) -> None:
        if self.method not in ("radam", "adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.method!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


class SharedWeights:
    """The master parameter vector plus optimizer state, lock-serialized.

    Reads hand out full copies; updates are atomic and counted. With
    ``record_deltas`` every applied delta is kept so a single-threaded replay
    can reproduce the final vector bitwise.
    """

    def __init__(
        self,
        params: np.ndarray,
        opt: OptimizerConfig,
        record_deltas: bool = False,
    ):
        opt.validate()
        self.opt = opt
        self._params = np.array(params, dtype=np.float64, copy=True)
        self.initial = self._params.copy()
        self._m = np.zeros_like(self._params)
        self._v = np.zeros_like(self._params)
        self._t = 0
        self.update_count = 0
        self.rejected_count = 0
        self._lock = threading.Lock()
        self.deltas: Optional[List[np.ndarray]] = [] if record_deltas else None
        self.log: List[dict] = []

    def snapshot(self) -> np.ndarray:
        with self._lock:
            return self._params.copy()

    def _direction(self, g: np.ndarray) -> np.ndarray:
        o = self.opt
        if o.method == "sgd":
            return o.lr * g
        self._m = o.beta1 * self._m + (1.0 - o.beta1) * g
        self._v = o.beta2 * self._v + (1.0 - o.beta2) * g * g
        t = self._t
        m_hat = self._m / (1.0 - o.beta1 ** t)
        if o.method == "adam":
            v_hat = np.sqrt(self._v / (1.0 - o.beta2 ** t))
            return o.lr * m_hat / (v_hat + o.eps)
        # variance-rectified: fall back to unadapted momentum while the
        # second-moment estimate is too young to be trusted
        rho_inf = 2.0 / (1.0 - o.beta2) - 1.0
        rho_t = rho_inf - 2.0 * t * o.beta2 ** t / (1.0 - o.beta2 ** t)
        if rho_t <= 4.0:
            return o.lr * m_hat
        v_hat = np.sqrt(self._v / (1.0 - o.beta2 ** t))
        rect = math.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        return o.lr * rect * m_hat / (v_hat + o.eps)

    def update(self, grad: np.ndarray, kind: str, meta: Optional[dict] = None) -> bool:
        """Apply one gradient; returns False (and logs) when the grad is rejected."""
        if kind not in (DISTILLING, AUTONOMOUS):
            raise InvalidInputError(f"unknown update kind {kind!r}")
        with self._lock:
            if not np.all(np.isfinite(grad)):
                self.rejected_count += 1
                entry = {"rejected": True, "kind": kind, "reason": "non-finite gradient"}
                entry.update(meta or {})
                self.log.append(entry)
                return False
            g = grad * self.opt.rl_scale if kind == AUTONOMOUS else grad
            if self.opt.grad_clip > 0.0:
                norm = float(np.linalg.norm(g))
                if norm > self.opt.grad_clip:
                    g = g * (self.opt.grad_clip / norm)
            self._t += 1
            delta = -self._direction(g)
            if kind == DISTILLING and self.opt.weight_decay > 0.0:
                delta = delta - self.opt.lr * self.opt.weight_decay * self._params
            self._params += delta
            self.update_count += 1
            if self.deltas is not None:
                self.deltas.append(delta.copy())
            entry = {"update": self.update_count, "kind": kind}
            entry.update(meta or {})
            self.log.append(entry)
            return True


def replay_deltas(initial: np.ndarray, deltas: Sequence[np.ndarray]) -> np.ndarray:
    """Re-apply a delta log in order; bitwise-equal to the live result."""
    out = initial.copy()
    for d in deltas:
        out += d
    return out


# -- curriculum ----------------------------------------------------------------


@dataclass
class CurriculumState:
    horizon: int
    max_horizon: int
    successes: int = 0
    episodes: int = 0


def curriculum_update(
    state: CurriculumState,
    sum_r_student: float,
    sum_r_teacher: float,
    tau: float = 0.25,
) -> None:
    """Count the episode; extend the horizon when the success ratio reaches tau."""
    state.episodes += 1
    if sum_r_student >= sum_r_teacher:
        state.successes += 1
    if state.successes / state.episodes >= tau:
        state.horizon = min(state.horizon + 1, state.max_horizon)
        state.successes = 0
        state.episodes = 0


class CurriculumStore:
    """Per-episode-source horizon table, updated under mutual exclusion."""

    def __init__(self, initial_horizon: int = 1, tau: float = 0.25):
        if initial_horizon < 1:
            raise ConfigError("initial horizon must be >= 1")
        self.initial_horizon = initial_horizon
        self.tau = tau
        self._lock = threading.Lock()
        self._table: Dict[tuple, CurriculumState] = {}

    def state_for(self, key: tuple, max_horizon: int) -> CurriculumState:
        with self._lock:
            if key not in self._table:
                self._table[key] = CurriculumState(
                    horizon=min(self.initial_horizon, max_horizon),
                    max_horizon=max_horizon,
                )
            return self._table[key]

    def horizon(self, key: tuple, max_horizon: int) -> int:
        return self.state_for(key, max_horizon).horizon

    def update(self, key: tuple, max_horizon: int, sum_r_student: float, sum_r_teacher: float) -> None:
        with self._lock:
            state = self._table.get(key)
            if state is None:
                state = CurriculumState(
                    horizon=min(self.initial_horizon, max_horizon), max_horizon=max_horizon
                )
                self._table[key] = state
            curriculum_update(state, sum_r_student, sum_r_teacher, self.tau)


# -- episodes and workers ------------------------------------------------------


@dataclass
class EpisodeSource:
    """A playable window: frames, ground truth, and per-teacher boxes."""

    key: tuple
    video_id: str
    frames: List[np.ndarray]
    gt: List[Box]
    teacher_boxes: Dict[str, List[Box]]


def chunk_sources(chunks: Sequence[TransferChunk]) -> List[EpisodeSource]:
    out = []
    for ch in chunks:
        out.append(
            EpisodeSource(
                key=(ch.video_id, ch.teacher_id, ch.start),
                video_id=ch.video_id,
                frames=ch.frames,
                gt=ch.gt,
                teacher_boxes={ch.teacher_id: ch.teacher_boxes},
            )
        )
    return out


@dataclass(frozen=True)
class WorkerConfig:
    t_max: int = 5
    gamma: float = 1.0
    context: float = 1.5
    patch_size: int = 32
    sigma_floor: float = 1e-3
    returns_mode: str = "forward"

    def validate(self) -> None:
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must be in (0, 1]")


def _best_teacher_step(
    source: EpisodeSource, t: int, b_prev: Box, gt: Box
) -> Tuple[np.ndarray, float, float]:
    """Best pool member at frame t: its action from b_prev, the reward that
    action earns from b_prev, and the teacher's own-chain reward."""
    ids = sorted(source.teacher_boxes)
    boxes = [source.teacher_boxes[tid][t] for tid in ids]
    k = best_teacher(boxes, gt)
    ta = teacher_action(boxes[k], b_prev)
    r_candidate = reward(apply_action(ta, b_prev), gt)
    r_own = reward(boxes[k], gt)
    return ta, r_candidate, r_own


def run_episode(
    model: StudentModel,
    theta: np.ndarray,
    source: EpisodeSource,
    kind: str,
    cfg: WorkerConfig,
    shared: SharedWeights,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
    meta: Optional[dict] = None,
) -> Tuple[float, float, List[EpisodeRecord]]:
    """Roll one episode under frozen theta, sending one gradient per window.

    Returns (sum of student rewards, sum of best-teacher own rewards, records).
    """
    cfg.validate()
    episode = TrackingEpisode(
        source.frames, source.gt, cfg.context, cfg.patch_size, horizon=horizon
    )
    state = episode.reset()
    hidden = model.zero_hidden()
    sum_r_student = 0.0
    sum_r_teacher = 0.0
    records: List[EpisodeRecord] = []
    done = False
    while not done:
        h0 = hidden
        steps: List[StepRecord] = []
        while len(steps) < cfg.t_max and not done:
            t_next = episode.t + 1
            b_prev = episode.box
            out, hidden = model.forward(theta, state, hidden)
            gt_action = infer_action(source.gt[t_next], b_prev)
            ta, r_cand, r_own = _best_teacher_step(source, t_next, b_prev, source.gt[t_next])
            if kind == DISTILLING:
                sample = None
                executed = out.action
            else:
                sample = sample_action(out.action, gt_action, rng, cfg.sigma_floor)
                executed = sample.action
            next_state, r, done = episode.step(executed)
            sum_r_student += r
            sum_r_teacher += r_own
            steps.append(
                StepRecord(
                    state=state,
                    mu=out.action,
                    value=out.value,
                    executed=executed,
                    reward=r,
                    gt_action=gt_action,
                    log_density=None if sample is None else sample.log_density,
                    raw=None if sample is None else sample.raw,
                    sigma=None if sample is None else sample.sigma,
                    teacher_action=ta,
                    mask=mask(r, r_cand),
                    teacher_reward=r_own,
                )
            )
            state = next_state
        if done:
            bootstrap = 0.0
        else:
            probe, _ = model.forward(theta, state, hidden)
            bootstrap = probe.value
        record = EpisodeRecord(
            steps=steps, h0=h0, bootstrap_value=bootstrap, terminated=done
        )
        records.append(record)
        loss_kind = "distill" if kind == DISTILLING else "rl"
        fn = window_loss_fn(model, record, loss_kind, cfg.gamma, cfg.returns_mode)
        loss, grad = fn(theta)
        entry = {
            "worker": -1,
            "loss": float(loss),
            "sum_reward": float(sum_r_student),
            "video_id": source.video_id,
            "T_hat": episode.horizon,
        }
        entry.update(meta or {})
        shared.update(grad, kind, entry)
    return sum_r_student, sum_r_teacher, records


def run_worker(
    kind: str,
    sources: Iterable[EpisodeSource],
    shared: SharedWeights,
    model: StudentModel,
    cfg: WorkerConfig,
    curriculum: Optional[CurriculumStore] = None,
    rng: Optional[np.random.Generator] = None,
    worker_id: int = 0,
    stop: Optional[Callable[[], bool]] = None,
) -> int:
    """Consume episode sources until exhaustion (or stop()); returns episode count.

    Theta is re-snapshot once per episode, never mid-episode.
    """
    if kind not in (DISTILLING, AUTONOMOUS):
        raise ConfigError(f"unknown worker kind {kind!r}")
    if rng is None:
        rng = np.random.default_rng(worker_id)
    episodes = 0
    for source in sources:
        if stop is not None and stop():
            break
        max_horizon = len(source.frames) - 1
        horizon = (
            curriculum.horizon(source.key, max_horizon) if curriculum else max_horizon
        )
        theta = shared.snapshot()
        sum_s, sum_t, _ = run_episode(
            model,
            theta,
            source,
            kind,
            cfg,
            shared,
            rng,
            horizon=horizon,
            meta={"worker": worker_id},
        )
        if curriculum is not None:
            curriculum.update(source.key, max_horizon, sum_s, sum_t)
        episodes += 1
    return episodes


# -- the training orchestrator -------------------------------------------------


@dataclass
class TrainSettings:
    workers: int = 8
    max_updates: int = 50000
    val_every: int = 2000
    patience: int = 5
    seed: int = 0
    curriculum: bool = True
    initial_horizon: int = 1
    tau: float = 0.25
    record_deltas: bool = False

    def validate(self) -> None:
        if self.workers < 2:
            raise ConfigError(f"need at least 2 workers for the even split, got {self.workers}")
        if self.max_updates < 1:
            raise ConfigError("max_updates must be positive")
        if self.val_every < 1:
            raise ConfigError("val_every must be positive")


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    best_val_ao: Optional[float]
    updates: int
    val_history: List[Tuple[int, float]]
    deltas: Optional[List[np.ndarray]] = None


def _endless_shuffle(
    sources: List[EpisodeSource], rng: np.random.Generator
) -> Iterable[EpisodeSource]:
    while True:
        for i in rng.permutation(len(sources)):
            yield sources[int(i)]


def train(
    model: StudentModel,
    chunks: Sequence[TransferChunk],
    settings: TrainSettings,
    worker_cfg: WorkerConfig,
    opt: OptimizerConfig,
    out_dir: str,
    validate_fn: Optional[Callable[[np.ndarray], float]] = None,
    init_params: Optional[np.ndarray] = None,
) -> TrainResult:
    """Run S asynchronous workers (even distilling/autonomous split) to a budget.

    ``validate_fn`` maps a parameter vector to a held-out score (higher is
    better); the best-scoring snapshot is checkpointed. Without it the final
    parameters are saved.
    """
    import os

    settings.validate()
    worker_cfg.validate()
    sources = chunk_sources(chunks)
    if not sources:
        raise ConfigError("no training chunks; transfer set is empty")
    os.makedirs(out_dir, exist_ok=True)

    params0 = model.init_params(settings.seed) if init_params is None else init_params
    shared = SharedWeights(params0, opt, record_deltas=settings.record_deltas)
    curriculum = (
        CurriculumStore(settings.initial_horizon, settings.tau)
        if settings.curriculum
        else None
    )
    stop_flag = threading.Event()

    def stop() -> bool:
        return stop_flag.is_set() or shared.update_count >= settings.max_updates

    threads = []
    n_distill = (settings.workers + 1) // 2
    for w in range(settings.workers):
        kind = DISTILLING if w < n_distill else AUTONOMOUS
        wrng = np.random.default_rng(np.random.SeedSequence([settings.seed, 7, w]))
        it = _endless_shuffle(sources, np.random.default_rng(np.random.SeedSequence([settings.seed, 11, w])))
        th = threading.Thread(
            target=run_worker,
            args=(kind, it, shared, model, worker_cfg, curriculum, wrng, w, stop),
            daemon=True,
        )
        threads.append(th)

    val_history: List[Tuple[int, float]] = []
    best: Tuple[Optional[float], np.ndarray] = (None, params0.copy())
    if validate_fn is not None:
        score = float(validate_fn(params0))
        val_history.append((0, score))
        best = (score, params0.copy())

    for th in threads:
        th.start()
    next_val = settings.val_every
    bad_rounds = 0
    try:
        while any(th.is_alive() for th in threads):
            time.sleep(0.05)
            if stop():
                break
            if validate_fn is not None and shared.update_count >= next_val:
                at = shared.update_count
                # one snapshot for scoring and keeping: workers move on meanwhile
                snap = shared.snapshot()
                score = float(validate_fn(snap))
                val_history.append((at, score))
                if best[0] is None or score > best[0]:
                    best = (score, snap)
                    bad_rounds = 0
                else:
                    bad_rounds += 1
                next_val = at + settings.val_every
                if bad_rounds >= settings.patience:
                    break
    finally:
        stop_flag.set()
        for th in threads:
            th.join()

    if validate_fn is not None and shared.update_count >= next_val:
        snap = shared.snapshot()
        score = float(validate_fn(snap))
        val_history.append((shared.update_count, score))
        if best[0] is None or score > best[0]:
            best = (score, snap)

    final_params = best[1] if validate_fn is not None else shared.snapshot()
    ckpt = os.path.join(out_dir, "student.ckpt")
    save_params(ckpt, model.config, final_params)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    with open(log_path, "w") as fh:
        for entry in shared.log:
            fh.write(json.dumps(entry) + "\n")
        for at, score in val_history:
            fh.write(json.dumps({"validation": True, "update": at, "val_score": score}) + "\n")
    return TrainResult(
        checkpoint_path=ckpt,
        log_path=log_path,
        best_val_ao=best[0],
        updates=shared.update_count,
        val_history=val_history,
        deltas=shared.deltas,
    )


# -- synthetic records for verification ----------------------------------------


def synthetic_record(
    model: StudentModel,
    params: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    sigma_floor: float = 0.05,
) -> EpisodeRecord:
    """A fully populated random window: real forward outputs, random rewards,
    teacher actions, masks, and Gaussian samples. Suitable for every loss kind.

    The spread floor sits well above the training-time one: 1/sigma^2 scales
    the policy loss's curvature, and finite differences need it bounded."""
    p = model.config.patch_size
    states = [
        State(
            patch_prev=rng.uniform(0, 255, (p, p, 3)),
            patch_cur=rng.uniform(0, 255, (p, p, 3)),
            anchor=Box(0, 0, 10, 10),
        )
        for _ in range(n_steps)
    ]
    h0 = model.zero_hidden()
    mus, values, _, _ = model.forward_window(params, states, h0)
    steps = []
    for i in range(n_steps):
        gt_action = rng.uniform(-0.4, 0.4, 4)
        sample = sample_action(mus[i], gt_action, rng, sigma_floor)
        steps.append(
            StepRecord(
                state=states[i],
                mu=mus[i],
                value=float(values[i]),
                executed=sample.action,
                reward=float(rng.choice([-1.0, 0.0, 0.4, 0.8, 1.0])),
                gt_action=gt_action,
                log_density=sample.log_density,
                raw=sample.raw,
                sigma=sample.sigma,
                teacher_action=rng.uniform(-0.8, 0.8, 4),
                mask=int(rng.integers(0, 2)),
                teacher_reward=float(rng.choice([0.0, 0.4, 0.8])),
            )
        )
    terminated = bool(rng.integers(0, 2))
    return EpisodeRecord(
        steps=steps,
        h0=h0,
        bootstrap_value=float(rng.normal() * 0.3),
        terminated=terminated,
    )
