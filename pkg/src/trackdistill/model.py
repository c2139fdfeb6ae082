"""The compact recurrent policy/value model, with exact gradients.

Architecture: two weight-shared patch encoders -> concat -> two fully
connected layers -> recurrent cell -> twin heads (bounded action, linear
value). Everything is float64 numpy with hand-derived reverse-mode gradients,
so finite-difference verification can be made tight.

Parameters live in one flat vector partitioned into named tensors; training
code treats it as an opaque array, which keeps shared-weight updates and
delta replay bitwise-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, ConfigError, NumericError, ParseError
from .mdp import State

CHECKPOINT_MAGIC = b"TRKDSTL1"
CHECKPOINT_VERSION = 1
HIDDEN_RESET_PERIOD = 32


@dataclass(frozen=True)
class StudentConfig:
    """Architecture knobs. ``encoder`` is "conv" (stride-2 stages) or "pool"
    (average pool + one fully connected layer, the smallest configuration)."""

    patch_size: int = 32
    encoder: str = "conv"
    conv_channels: Tuple[int, ...] = (8, 16, 32)
    pool_factor: int = 4
    pool_dim: int = 32
    fc_dim: int = 64
    hidden_dim: int = 64

    def validate(self) -> None:
        if self.encoder not in ("conv", "pool"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if min(self.patch_size, self.fc_dim, self.hidden_dim) <= 0:
            raise ConfigError("sizes must be positive")
        if self.encoder == "conv":
            if not self.conv_channels:
                raise ConfigError("conv encoder needs at least one stage")
            if self.patch_size % (2 ** len(self.conv_channels)) != 0:
                raise ConfigError(
                    f"patch size {self.patch_size} not divisible by "
                    f"2^{len(self.conv_channels)} stride-2 stages"
                )
        else:
            if self.pool_factor <= 0 or self.patch_size % self.pool_factor != 0:
                raise ConfigError(
                    f"patch size {self.patch_size} not divisible by pool factor "
                    f"{self.pool_factor}"
                )
            if self.pool_dim <= 0:
                raise ConfigError("pool_dim must be positive")

    def fingerprint(self) -> bytes:
        payload = json.dumps(
            {
                "patch_size": self.patch_size,
                "encoder": self.encoder,
                "conv_channels": list(self.conv_channels),
                "pool_factor": self.pool_factor,
                "pool_dim": self.pool_dim,
                "fc_dim": self.fc_dim,
                "hidden_dim": self.hidden_dim,
            },
            sort_keys=True,
        ).encode("ascii")
        return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class HiddenState:
    """Recurrent cell state; immutable snapshot."""

    h: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class StudentOutput:
    action: np.ndarray  # in (-1, 1)^4
    value: float


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _ConvIndex:
    """Precomputed gather indices for one stride-2, pad-1, 3x3 stage."""

    def __init__(self, h: int, w: int, cin: int):
        self.h, self.w, self.cin = h, w, cin
        self.oh = (h + 2 - 3) // 2 + 1
        self.ow = (w + 2 - 3) // 2 + 1
        oy = np.arange(self.oh) * 2
        ox = np.arange(self.ow) * 2
        k = np.arange(3)
        self.Y = (oy[:, None, None, None] + k[None, None, :, None])
        self.X = (ox[None, :, None, None] + k[None, None, None, :])


class StudentModel:
    """Stateless computation over flat parameter vectors for one architecture."""

    def __init__(self, config: StudentConfig):
        config.validate()
        self.config = config
        self._layout: List[Tuple[str, Tuple[int, ...], int]] = []
        offset = 0

        def add(name: str, shape: Tuple[int, ...]) -> None:
            nonlocal offset
            self._layout.append((name, shape, offset))
            offset += int(np.prod(shape))

        p = config.patch_size
        self._conv_idx: List[_ConvIndex] = []
        if config.encoder == "conv":
            side, cin = p, 3
            for k, cout in enumerate(config.conv_channels):
                add(f"enc.conv{k}.W", (cout, cin, 3, 3))
                add(f"enc.conv{k}.b", (cout,))
                self._conv_idx.append(_ConvIndex(side, side, cin))
                side //= 2
                cin = cout
            self.feature_dim = side * side * cin
        else:
            side = p // config.pool_factor
            add("enc.fc.W", (config.pool_dim, side * side * 3))
            add("enc.fc.b", (config.pool_dim,))
            self.feature_dim = config.pool_dim

        f, hdim = config.fc_dim, config.hidden_dim
        add("fuse1.W", (f, 2 * self.feature_dim))
        add("fuse1.b", (f,))
        add("fuse2.W", (f, f))
        add("fuse2.b", (f,))
        add("rnn.Wx", (4 * hdim, f))
        add("rnn.Wh", (4 * hdim, hdim))
        add("rnn.b", (4 * hdim,))
        add("policy.W", (4, hdim))
        add("policy.b", (4,))
        add("value.W", (1, hdim))
        add("value.b", (1,))
        self.n_params = offset
        self._slices: Dict[str, Tuple[slice, Tuple[int, ...]]] = {
            name: (slice(off, off + int(np.prod(shape))), shape)
            for name, shape, off in self._layout
        }

    # -- parameter vector plumbing -------------------------------------------

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return params[sl].reshape(shape)

    def views(self, params: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: self.view(params, name) for name, _, _ in self._layout}

    def param_name(self, index: int) -> str:
        for name, shape, off in self._layout:
            n = int(np.prod(shape))
            if off <= index < off + n:
                return f"{name}[{index - off}]"
        raise IndexError(index)

    def init_params(self, seed: int) -> np.ndarray:
        """Uniform fan-in init for weights, zero biases; fully seed-determined."""
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params)
        for name, shape, _ in self._layout:
            if name.endswith(".b"):
                continue
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            self.view(params, name)[...] = rng.uniform(-bound, bound, shape)
        return params

    def zero_hidden(self) -> HiddenState:
        hdim = self.config.hidden_dim
        return HiddenState(np.zeros(hdim), np.zeros(hdim))

    # -- encoder --------------------------------------------------------------

    def _encode(self, v: Dict[str, np.ndarray], patch: np.ndarray):
        x = patch / 255.0 - 0.5
        if self.config.encoder == "conv":
            stage_caches = []
            for k in range(len(self.config.conv_channels)):
                W = v[f"enc.conv{k}.W"]
                idx = self._conv_idx[k]
                xpad = np.pad(x, ((1, 1), (1, 1), (0, 0)))
                patches = xpad[idx.Y, idx.X]  # (oh, ow, 3, 3, cin)
                cols = patches.transpose(0, 1, 4, 2, 3).reshape(idx.oh * idx.ow, idx.cin * 9)
                pre = cols @ W.reshape(W.shape[0], -1).T + v[f"enc.conv{k}.b"]
                stage_caches.append((cols, pre))
                x = np.maximum(pre, 0.0).reshape(idx.oh, idx.ow, W.shape[0])
            return x.reshape(-1), stage_caches
        side = self.config.patch_size // self.config.pool_factor
        f = self.config.pool_factor
        pooled = x.reshape(side, f, side, f, 3).mean(axis=(1, 3))
        flat = pooled.reshape(-1)
        pre = v["enc.fc.W"] @ flat + v["enc.fc.b"]
        return np.maximum(pre, 0.0), (flat, pre)

    def _encode_backward(self, v, g, dfeat: np.ndarray, cache) -> None:
        # Input-patch gradients are never needed (patches are data), so the
        # first stage skips the scatter back to pixels.
        if self.config.encoder == "conv":
            chans = self.config.conv_channels
            dx = dfeat
            for k in range(len(chans) - 1, -1, -1):
                idx = self._conv_idx[k]
                W = v[f"enc.conv{k}.W"]
                cols, pre = cache[k]
                cout = W.shape[0]
                dpre = dx.reshape(-1, cout) * (pre > 0)
                g[f"enc.conv{k}.W"] += (dpre.T @ cols).reshape(W.shape)
                g[f"enc.conv{k}.b"] += dpre.sum(axis=0)
                if k == 0:
                    break
                dcols = dpre @ W.reshape(cout, -1)
                dpatches = dcols.reshape(idx.oh, idx.ow, idx.cin, 3, 3).transpose(0, 1, 3, 4, 2)
                dxpad = np.zeros((idx.h + 2, idx.w + 2, idx.cin))
                np.add.at(dxpad, (idx.Y, idx.X), dpatches)
                dx = dxpad[1:-1, 1:-1, :]
            return
        flat, pre = cache
        dpre = dfeat * (pre > 0)
        g["enc.fc.W"] += np.outer(dpre, flat)
        g["enc.fc.b"] += dpre

    def encode_feature(self, params: np.ndarray, patch: np.ndarray) -> np.ndarray:
        """The shared-branch feature for one patch (both branches use this)."""
        feat, _ = self._encode(self.views(params), patch)
        return feat

    # -- forward --------------------------------------------------------------

    def _check_state(self, state: State) -> None:
        p = self.config.patch_size
        want = (p, p, 3)
        if state.patch_prev.shape != want or state.patch_cur.shape != want:
            raise ConfigError(
                f"state patches {state.patch_prev.shape}/{state.patch_cur.shape} "
                f"do not match configured {want}"
            )

    def _step(self, v: Dict[str, np.ndarray], state: State, h_prev, c_prev):
        f1, ce1 = self._encode(v, state.patch_prev)
        f2, ce2 = self._encode(v, state.patch_cur)
        z = np.concatenate([f1, f2])
        pre1 = v["fuse1.W"] @ z + v["fuse1.b"]
        a1 = np.maximum(pre1, 0.0)
        pre2 = v["fuse2.W"] @ a1 + v["fuse2.b"]
        a2 = np.maximum(pre2, 0.0)

        hdim = self.config.hidden_dim
        gates = v["rnn.Wx"] @ a2 + v["rnn.Wh"] @ h_prev + v["rnn.b"]
        gi = _sigmoid(gates[0:hdim])
        gf = _sigmoid(gates[hdim : 2 * hdim])
        gg = np.tanh(gates[2 * hdim : 3 * hdim])
        go = _sigmoid(gates[3 * hdim : 4 * hdim])
        c = gf * c_prev + gi * gg
        tc = np.tanh(c)
        h = go * tc

        za = v["policy.W"] @ h + v["policy.b"]
        mu = np.tanh(za)
        value = float(v["value.W"][0] @ h + v["value.b"][0])
        cache = (ce1, ce2, z, pre1, a1, pre2, a2, h_prev, c_prev, gi, gf, gg, go, c, tc, h, mu)
        return mu, value, h, c, cache

    def forward(self, params: np.ndarray, state: State, hidden: HiddenState):
        """One prediction; purely functional in (params, state, hidden)."""
        self._check_state(state)
        mu, value, h, c, _ = self._step(self.views(params), state, hidden.h, hidden.c)
        return StudentOutput(mu, value), HiddenState(h, c)

    def forward_window(
        self, params: np.ndarray, states: Sequence[State], hidden: HiddenState
    ):
        """Run consecutive steps, keeping every intermediate for backward.

        Returns (mus (n,4), values (n,), final HiddenState, cache).
        """
        v = self.views(params)
        h, c = hidden.h, hidden.c
        mus, values, caches = [], [], []
        for i, state in enumerate(states):
            self._check_state(state)
            mu, value, h, c, cache = self._step(v, state, h, c)
            if not (np.all(np.isfinite(mu)) and np.isfinite(value)):
                raise NumericError(f"non-finite model output at window step {i}")
            mus.append(mu)
            values.append(value)
            caches.append(cache)
        return np.array(mus), np.array(values), HiddenState(h, c), caches

    # -- backward -------------------------------------------------------------

    def backward_window(
        self,
        params: np.ndarray,
        caches: list,
        dmus: np.ndarray,
        dvalues: np.ndarray,
    ) -> np.ndarray:
        """Exact gradient of sum_i (dmus[i].mu_i + dvalues[i].v_i) w.r.t. params.

        dmus/dvalues are the loss derivatives at each step's outputs;
        backpropagation runs through time across the whole window.
        """
        v = self.views(params)
        grad = np.zeros(self.n_params)
        g = self.views(grad)
        hdim = self.config.hidden_dim
        dh_carry = np.zeros(hdim)
        dc_carry = np.zeros(hdim)

        for i in range(len(caches) - 1, -1, -1):
            (ce1, ce2, z, pre1, a1, pre2, a2, h_prev, c_prev,
             gi, gf, gg, go, c, tc, h, mu) = caches[i]

            dza = dmus[i] * (1.0 - mu * mu)
            g["policy.W"] += np.outer(dza, h)
            g["policy.b"] += dza
            dv = float(dvalues[i])
            g["value.W"] += dv * h[None, :]
            g["value.b"] += dv
            dh = dh_carry + v["policy.W"].T @ dza + dv * v["value.W"][0]

            do = dh * tc
            dc = dc_carry + dh * go * (1.0 - tc * tc)
            df = dc * c_prev
            di = dc * gg
            dgg = dc * gi
            dc_carry = dc * gf
            dgates = np.concatenate(
                [
                    di * gi * (1.0 - gi),
                    df * gf * (1.0 - gf),
                    dgg * (1.0 - gg * gg),
                    do * go * (1.0 - go),
                ]
            )
            g["rnn.Wx"] += np.outer(dgates, a2)
            g["rnn.Wh"] += np.outer(dgates, h_prev)
            g["rnn.b"] += dgates
            dh_carry = v["rnn.Wh"].T @ dgates

            da2 = v["rnn.Wx"].T @ dgates
            dpre2 = da2 * (pre2 > 0)
            g["fuse2.W"] += np.outer(dpre2, a1)
            g["fuse2.b"] += dpre2
            da1 = v["fuse2.W"].T @ dpre2
            dpre1 = da1 * (pre1 > 0)
            g["fuse1.W"] += np.outer(dpre1, z)
            g["fuse1.b"] += dpre1
            dz = v["fuse1.W"].T @ dpre1
            self._encode_backward(v, g, dz[: self.feature_dim], ce1)
            self._encode_backward(v, g, dz[self.feature_dim :], ce2)
        return grad


# -- hidden-state schedule ----------------------------------------------------


class HiddenSchedule:
    """The inference-time reset rule: every ``period`` frames the hidden state
    returns to the snapshot taken after the first prediction.

    Use ``before(t)`` to fetch the state for 1-based prediction step t and
    ``after(t, hidden)`` to record the advanced state.
    """

    def __init__(self, model: StudentModel, period: int = HIDDEN_RESET_PERIOD):
        self.period = period
        self.hidden = model.zero_hidden()
        self.snapshot: Optional[HiddenState] = None

    def before(self, t: int) -> HiddenState:
        if t > 1 and (t - 1) % self.period == 0 and self.snapshot is not None:
            self.hidden = self.snapshot
        return self.hidden

    def after(self, t: int, hidden: HiddenState) -> None:
        self.hidden = hidden
        if t == 1:
            self.snapshot = hidden


# -- finite-difference verification -------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    worst_name: str
    checked: int
    details: List[Tuple[str, float, float, float]] = field(repr=False, default_factory=list)

    def __str__(self) -> str:
        return (
            f"grad check: max rel error {self.max_rel_error:.3e} at "
            f"{self.worst_name} over {self.checked} coordinates"
        )


def grad_check(
    params: np.ndarray,
    loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    eps: float = 1e-4,
    samples: int = 100,
    rng: Optional[np.random.Generator] = None,
    name_of: Optional[Callable[[int], str]] = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences on sampled coordinates.

    Relative error uses a 1e-3 floor in the denominator, so coordinates with
    near-zero gradient are held to an absolute standard instead of a ratio of
    roundoff noise.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    _, grad = loss_fn(params)
    n = params.size
    count = min(samples, n)
    idx = rng.choice(n, size=count, replace=False)
    worst = (0.0, int(idx[0]))
    details = []
    for i in idx:
        probe = params.copy()
        probe[i] = params[i] + eps
        lp, _ = loss_fn(probe)
        probe[i] = params[i] - eps
        lm, _ = loss_fn(probe)
        numeric = (lp - lm) / (2.0 * eps)
        analytic = grad[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
        name = name_of(int(i)) if name_of else str(int(i))
        details.append((name, float(analytic), float(numeric), float(rel)))
        if rel > worst[0]:
            worst = (float(rel), int(i))
    worst_name = name_of(worst[1]) if name_of else str(worst[1])
    return GradCheckReport(worst[0], worst[1], worst_name, count, details)


# -- checkpoints ---------------------------------------------------------------


def save_params(path: str, config: StudentConfig, params: np.ndarray) -> None:
    if params.size and not np.all(np.isfinite(params)):
        raise NumericError("refusing to checkpoint non-finite parameters")
    data = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(config.fingerprint())
        fh.write(struct.pack("<Q", data.size))
        fh.write(data.tobytes())


def load_params(path: str, config: StudentConfig) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise ParseError(f"{path}: {e}")
    header = len(CHECKPOINT_MAGIC) + 4 + 32 + 8
    if len(blob) < header:
        raise ParseError(f"{path}: truncated checkpoint header")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic")
    pos = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    fp = blob[pos : pos + 32]
    pos += 32
    if fp != config.fingerprint():
        raise CheckpointError(
            f"{path}: checkpoint belongs to a different architecture"
        )
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    expected = count * 8
    if len(blob) - pos != expected:
        raise ParseError(f"{path}: raster has {len(blob) - pos} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
