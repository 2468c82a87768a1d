"""Learned virtual process: two LSTM sequence models (one for [C], one for [D])
with sigmoid output heads, trained by full-sequence BPTT, plus the one-step
virtual transition the agents interact with.

Inputs per step are (feed rate, previous output value), teacher-forced with
ground truth during training and fed back autoregressively at inference.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .dataset import EpisodeRecord

INPUT_SIZE = 2
WEIGHT_INIT_RANGE = 0.08
FORGET_BIAS_INIT = 1.0
CHECKPOINT_SCHEMA = 1

# Gate layout inside the stacked 4H dimension: input, forget, cell candidate,
# output.
_I, _F, _G, _O = range(4)


class SurrogateError(Exception):
    pass


class DivergenceError(SurrogateError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class RecurrentModel:
    """LSTM cell weights plus a sigmoid scalar output head."""

    wx: np.ndarray  # (input_size, 4*hidden)
    wh: np.ndarray  # (hidden, 4*hidden)
    b: np.ndarray  # (4*hidden,)
    wy: np.ndarray  # (hidden,)
    by: float
    hidden_size: int
    input_size: int = INPUT_SIZE

    def validate(self) -> None:
        h, i = self.hidden_size, self.input_size
        if self.wx.shape != (i, 4 * h) or self.wh.shape != (h, 4 * h):
            raise SurrogateError("gate weight shapes inconsistent with sizes")
        if self.b.shape != (4 * h,) or self.wy.shape != (h,):
            raise SurrogateError("bias/head shapes inconsistent with hidden size")
        for arr in (self.wx, self.wh, self.b, self.wy):
            if not np.all(np.isfinite(arr)):
                raise SurrogateError("non-finite weight")

    def params(self) -> dict[str, np.ndarray]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b, "wy": self.wy,
                "by": np.array([self.by])}


def init_model(hidden_size: int, rng: np.random.Generator,
               input_size: int = INPUT_SIZE) -> RecurrentModel:
    def u(*shape):
        return rng.uniform(-WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE, size=shape)

    b = u(4 * hidden_size)
    b[_F * hidden_size : (_F + 1) * hidden_size] += FORGET_BIAS_INIT
    return RecurrentModel(
        wx=u(input_size, 4 * hidden_size),
        wh=u(hidden_size, 4 * hidden_size),
        b=b,
        wy=u(hidden_size),
        by=float(u(1)[0]),
        hidden_size=hidden_size,
        input_size=input_size,
    )


class CellState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


def zero_state(model: RecurrentModel, batch: int | None = None) -> CellState:
    shape = (model.hidden_size,) if batch is None else (batch, model.hidden_size)
    return CellState(np.zeros(shape), np.zeros(shape))


def forward_step(model: RecurrentModel, x: np.ndarray, state: CellState
                 ) -> tuple[float | np.ndarray, CellState]:
    """One cell update plus the sigmoid output head.

    Accepts a single input vector (input_size,) or a batch (B, input_size);
    the carried state must match. Never mutates the carried state.
    """
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    if x.shape[-1] != model.input_size:
        raise SurrogateError(f"input size mismatch: {x.shape}")
    if state.h.shape[-1] != model.hidden_size:
        raise SurrogateError(f"carried state size mismatch: {state.h.shape}")
    hdim = model.hidden_size
    z = x @ model.wx + state.h @ model.wh + model.b
    i = expit(z[..., :hdim])
    f = expit(z[..., hdim : 2 * hdim])
    g = np.tanh(z[..., 2 * hdim : 3 * hdim])
    o = expit(z[..., 3 * hdim :])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    y = expit(h @ model.wy + model.by)
    if not batched:
        y = float(y)
    return y, CellState(h, c)


def _forward_sequence(model: RecurrentModel, x: np.ndarray):
    """Teacher-forced forward pass over a batch of sequences.

    x: (B, T, input_size). Returns (ys (B, T), caches for backprop).
    """
    bsz, horizon, _ = x.shape
    hdim = model.hidden_size
    h = np.zeros((bsz, hdim))
    c = np.zeros((bsz, hdim))
    ys = np.empty((bsz, horizon))
    caches = []
    for t in range(horizon):
        z = x[:, t] @ model.wx + h @ model.wh + model.b
        i = expit(z[:, :hdim])
        f = expit(z[:, hdim : 2 * hdim])
        g = np.tanh(z[:, 2 * hdim : 3 * hdim])
        o = expit(z[:, 3 * hdim :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        y = expit(h_new @ model.wy + model.by)
        caches.append((h, c, i, f, g, o, tc, h_new, y))
        h, c = h_new, c_new
        ys[:, t] = y
    return ys, caches


def _loss_and_gradients(model: RecurrentModel, x: np.ndarray, targets: np.ndarray
                        ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared-error loss over the batch and exact BPTT gradients."""
    bsz, horizon, _ = x.shape
    hdim = model.hidden_size
    ys, caches = _forward_sequence(model, x)
    diff = ys - targets
    loss = float(np.mean(diff**2))

    grads = {
        "wx": np.zeros_like(model.wx),
        "wh": np.zeros_like(model.wh),
        "b": np.zeros_like(model.b),
        "wy": np.zeros_like(model.wy),
        "by": np.zeros(1),
    }
    dh_next = np.zeros((bsz, hdim))
    dc_next = np.zeros((bsz, hdim))
    scale = 2.0 / (bsz * horizon)
    for t in range(horizon - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc, h_new, y = caches[t]
        dy = scale * diff[:, t]
        ds = dy * y * (1.0 - y)
        grads["wy"] += h_new.T @ ds
        grads["by"][0] += ds.sum()
        dh = dh_next + ds[:, None] * model.wy[None, :]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        do = dh * tc
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.empty((bsz, 4 * hdim))
        dz[:, :hdim] = di * i * (1.0 - i)
        dz[:, hdim : 2 * hdim] = df * f * (1.0 - f)
        dz[:, 2 * hdim : 3 * hdim] = dg * (1.0 - g * g)
        dz[:, 3 * hdim :] = do * o * (1.0 - o)
        grads["wx"] += x[:, t].T @ dz
        grads["wh"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        dh_next = dz @ model.wh.T
        dc_next = dc * f
    return loss, grads


def _clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if clip_norm > 0 and total > clip_norm:
        factor = clip_norm / total
        for g in grads.values():
            g *= factor


@dataclass
class TrainingConfig:
    hidden_size: int = 100
    mini_batch: int = 20
    epochs: int = 3000
    learning_rate: float = 0.2
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_size < 1 or self.mini_batch < 1 or self.epochs < 1:
            raise ValueError("hidden_size, mini_batch and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def train(model: RecurrentModel, inputs: np.ndarray, targets: np.ndarray,
          config: TrainingConfig) -> tuple[RecurrentModel, list[float]]:
    """Mini-batch gradient descent on MSE over full sequences.

    inputs: (N, T, input_size) teacher-forced features, targets: (N, T) in
    normalized space. Returns the trained model and the per-epoch loss curve.
    """
    if len(inputs) == 0:
        raise ValueError("empty training set")
    model = replace(
        model, wx=model.wx.copy(), wh=model.wh.copy(), b=model.b.copy(),
        wy=model.wy.copy(),
    )
    rng = np.random.default_rng(config.seed)
    n = len(inputs)
    losses: list[float] = []
    velocity = {name: np.zeros_like(p) for name, p in model.params().items()}
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, config.mini_batch):
            idx = perm[start : start + config.mini_batch]
            loss, grads = _loss_and_gradients(model, inputs[idx], targets[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            _clip_gradients(grads, config.clip_norm)
            lr = config.learning_rate
            for name in velocity:
                velocity[name] = config.momentum * velocity[name] + grads[name]
            model.wx -= lr * velocity["wx"]
            model.wh -= lr * velocity["wh"]
            model.b -= lr * velocity["b"]
            model.wy -= lr * velocity["wy"]
            model.by -= lr * float(velocity["by"][0])
            epoch_loss += loss * len(idx)
            seen += len(idx)
        losses.append(epoch_loss / seen)
    return model, losses


@dataclass(frozen=True)
class Normalization:
    """Per-channel scaling into the sigmoid output range."""

    u_scale: float = 1.0 / 0.009
    y_scale: float = 10.0

    def features(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.stack([np.asarray(u) * self.u_scale,
                         np.asarray(y) * self.y_scale], axis=-1)


@dataclass
class VirtualSpace:
    """The learned process: one model per product plus shared normalization."""

    model_c: RecurrentModel
    model_d: RecurrentModel
    norm: Normalization = Normalization()


class VirtualState(NamedTuple):
    """Immutable carried state of the virtual process; forks freely."""

    cell_c: CellState
    cell_d: CellState
    y_c: float | np.ndarray  # current [C] estimate, physical units
    y_d: float | np.ndarray


def reset_virtual(space: VirtualSpace, c0: float = 0.0, d0: float = 0.0,
                  batch: int | None = None) -> VirtualState:
    y_c = c0 if batch is None else np.full(batch, float(c0))
    y_d = d0 if batch is None else np.full(batch, float(d0))
    return VirtualState(
        cell_c=zero_state(space.model_c, batch),
        cell_d=zero_state(space.model_d, batch),
        y_c=y_c,
        y_d=y_d,
    )


def step_virtual(space: VirtualSpace, state: VirtualState, u: float | np.ndarray
                 ) -> tuple[float | np.ndarray, float | np.ndarray, VirtualState]:
    """Advance both models one control step under feed rate u.

    Scalar u with a scalar carried state, or a length-B vector with a batched
    carried state (independent rollouts advanced in lockstep).
    """
    x_c = space.norm.features(u, state.y_c)
    x_d = space.norm.features(u, state.y_d)
    yc_n, cell_c = forward_step(space.model_c, x_c, state.cell_c)
    yd_n, cell_d = forward_step(space.model_d, x_d, state.cell_d)
    y_c = yc_n / space.norm.y_scale
    y_d = yd_n / space.norm.y_scale
    return y_c, y_d, VirtualState(cell_c, cell_d, y_c, y_d)


def observe_virtual(space: VirtualSpace, state: VirtualState, u: float,
                    c_meas: float, d_meas: float) -> VirtualState:
    """Advance the carried state using a real measurement pair.

    Feeds (u, previous measured value) through both cells, then pins the
    carried outputs to the new measurements; keeps the virtual state in sync
    with the real process during real-environment episodes.
    """
    _, _, nxt = step_virtual(space, state, u)
    return VirtualState(nxt.cell_c, nxt.cell_d, c_meas, d_meas)


def rollout_predict(space: VirtualSpace, controls: np.ndarray,
                    c0: float = 0.0, d0: float = 0.0
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop autoregressive prediction of the [C] and [D] series."""
    state = reset_virtual(space, c0, d0)
    c_series = [float(c0)]
    d_series = [float(d0)]
    for u in controls:
        y_c, y_d, state = step_virtual(space, state, float(u))
        c_series.append(y_c)
        d_series.append(y_d)
    return np.array(c_series), np.array(d_series)


def rollout_predict_batch(space: VirtualSpace, controls: np.ndarray,
                          c0: float = 0.0, d0: float = 0.0
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop prediction for many episodes at once.

    controls: (n_episodes, n_steps). Returns (c, d) of shape
    (n_episodes, n_steps + 1).
    """
    controls = np.asarray(controls, dtype=float)
    n_ep, n_steps = controls.shape
    state = reset_virtual(space, c0, d0, batch=n_ep)
    c_out = np.empty((n_ep, n_steps + 1))
    d_out = np.empty((n_ep, n_steps + 1))
    c_out[:, 0] = c0
    d_out[:, 0] = d0
    for t in range(n_steps):
        y_c, y_d, state = step_virtual(space, state, controls[:, t])
        c_out[:, t + 1] = y_c
        d_out[:, t + 1] = y_d
    return c_out, d_out


def training_arrays(episodes: list[EpisodeRecord], channel: str,
                    norm: Normalization = Normalization()
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced (inputs, targets) arrays for one product channel."""
    if channel not in ("c", "d"):
        raise ValueError("channel must be 'c' or 'd'")
    series = np.stack([ep.c_series if channel == "c" else ep.d_series
                       for ep in episodes])
    u = np.stack([ep.controls for ep in episodes])
    inputs = norm.features(u, series[:, :-1])
    targets = series[:, 1:] * norm.y_scale
    return inputs, targets


def rmse(predicted: np.ndarray, true: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-time-index RMSE across episodes plus its mean.

    Both arrays are (n_episodes, n_times) or a single pair of 1-D series.
    """
    predicted = np.atleast_2d(np.asarray(predicted, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if predicted.shape != true.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {true.shape}")
    per_step = np.sqrt(np.mean((predicted - true) ** 2, axis=0))
    return per_step, float(per_step.mean())


def save_checkpoint(space: VirtualSpace, path: str | Path,
                    extra: dict | None = None) -> None:
    def dump(m: RecurrentModel) -> dict:
        return {
            "hidden_size": m.hidden_size,
            "input_size": m.input_size,
            "wx": m.wx.tolist(),
            "wh": m.wh.tolist(),
            "b": m.b.tolist(),
            "wy": m.wy.tolist(),
            "by": m.by,
        }

    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "model_c": dump(space.model_c),
        "model_d": dump(space.model_d),
        "normalization": {"u_scale": space.norm.u_scale, "y_scale": space.norm.y_scale},
    }
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> VirtualSpace:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise SurrogateError(f"unsupported checkpoint schema: {doc.get('schema_version')}")

    def load(rec: dict) -> RecurrentModel:
        m = RecurrentModel(
            wx=np.array(rec["wx"], dtype=float),
            wh=np.array(rec["wh"], dtype=float),
            b=np.array(rec["b"], dtype=float),
            wy=np.array(rec["wy"], dtype=float),
            by=float(rec["by"]),
            hidden_size=int(rec["hidden_size"]),
            input_size=int(rec["input_size"]),
        )
        m.validate()
        return m

    norm = Normalization(**doc["normalization"])
    return VirtualSpace(model_c=load(doc["model_c"]), model_d=load(doc["model_d"]),
                        norm=norm)
