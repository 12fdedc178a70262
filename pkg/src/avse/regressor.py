"""Contextual feature regressor: maps context windows of noisy-audio and/or
visual features to clean log-filterbank features.

Three modes share the building blocks: an audio-only stack of two LSTM
layers, a visual-only stack (per-frame conv/pool pyramid or dense embedding
feeding one LSTM), and a fused mode concatenating both branches into two
dense layers.  Everything is plain numpy with hand-written reverse-mode
gradients, trained by minibatch RMSProp on a squared-error cost; gradient
correctness is pinned down by finite-difference tests.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NumericFailureError
from .filterbank import FeatureSequence
from .ioutil import atomic_write_bytes

MODES = ("a_only", "v_only", "av")

CHECKPOINT_MAGIC = b"EVWM1"


@dataclass(frozen=True)
class VisualVector:
    """Visual input as a per-frame coefficient vector (e.g. 2D-DCT)."""

    dim: int


@dataclass(frozen=True)
class VisualImage:
    """Visual input as a per-frame grayscale ROI image."""

    height: int
    width: int


@dataclass
class ModelConfig:
    mode: str = "av"
    context_window: int = 6          # current frame plus W-1 prior frames
    audio_dim: int = 23
    visual_input: VisualVector | VisualImage = VisualVector(50)
    conv_filters: tuple = (16, 32, 64, 128)
    conv_kernel: tuple = (3, 5)
    pool: tuple = (2, 2)
    visual_lstm_cells: int = 100
    audio_lstm_cells: tuple = (250, 300)
    fusion_dense: tuple = (300, 150)
    visual_embed_dim: int = 64
    output_dim: int = 23
    dropout_rate: float = 0.20
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if tuple(self.pool) != (2, 2):
            raise ValueError("only 2x2 pooling is supported")
        counts = (self.audio_dim, self.visual_lstm_cells, self.visual_embed_dim,
                  self.output_dim, *self.audio_lstm_cells, *self.fusion_dense,
                  *self.conv_filters)
        if any(c < 1 for c in counts):
            raise ValueError("all unit counts must be >= 1")
        self.conv_filters = tuple(self.conv_filters)
        self.conv_kernel = tuple(self.conv_kernel)
        self.pool = tuple(self.pool)
        self.audio_lstm_cells = tuple(self.audio_lstm_cells)
        self.fusion_dense = tuple(self.fusion_dense)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.rmsprop_rho < 1.0):
            raise ValueError("rmsprop_rho must lie in (0, 1)")
        if self.rmsprop_eps <= 0.0:
            raise ValueError("rmsprop_eps must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class RegressorModel:
    config: ModelConfig
    params: dict
    rmsprop_cache: dict


@dataclass
class WindowDataset:
    """Context-window training set; audio/visual may be None depending on mode."""

    targets: np.ndarray                 # (N, M)
    audio: np.ndarray | None = None     # (N, W, audio_dim)
    visual: np.ndarray | None = None    # (N, W, D) or (N, W, h, w)


# ---------------------------------------------------------------------------
# primitives


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dense(x, weight, bias, activation):
    if x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ValueError(
            f"dense shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    z = x @ weight + bias
    if activation == "linear":
        out = z
    elif activation == "tanh":
        out = np.tanh(z)
    elif activation == "relu":
        out = np.maximum(z, 0.0)
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out, (x, weight, out, activation)


def _dense_back(dout, cache):
    x, weight, out, activation = cache
    if activation == "linear":
        dz = dout
    elif activation == "tanh":
        dz = dout * (1.0 - out * out)
    else:  # relu
        dz = dout * (out > 0.0)
    return dz @ weight.T, x.T @ dz, dz.sum(axis=0)


def dense_forward(x, weight, bias, activation="linear"):
    """activation(x @ weight + bias)."""
    out, _ = _dense(np.asarray(x, dtype=np.float64), weight, bias, activation)
    return out


def _lstm_step(x, h_prev, c_prev, params):
    wx, wh, b = params["wx"], params["wh"], params["b"]
    cells = wh.shape[0]
    if x.shape[-1] != wx.shape[0] or h_prev.shape[-1] != cells or c_prev.shape[-1] != cells:
        raise ValueError("lstm step shape mismatch")
    z = x @ wx + h_prev @ wh + b
    i = _sigmoid(z[..., :cells])
    f = _sigmoid(z[..., cells : 2 * cells])
    o = _sigmoid(z[..., 2 * cells : 3 * cells])
    g = np.tanh(z[..., 3 * cells :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, (x, h_prev, c_prev, i, f, o, g, c)


def _lstm_step_back(dh, dc_in, cache, params):
    x, h_prev, c_prev, i, f, o, g, c = cache
    wx, wh = params["wx"], params["wh"]
    tc = np.tanh(c)
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)],
        axis=-1,
    )
    return (
        dz @ wx.T,          # dx
        dz @ wh.T,          # dh_prev
        dc_prev,
        x.T @ dz,           # dwx
        h_prev.T @ dz,      # dwh
        dz.sum(axis=0),     # db
    )


def lstm_step(x_t, h_prev, c_prev, params):
    """One LSTM cell update; returns (h_t, c_t)."""
    h, c, _ = _lstm_step(
        np.asarray(x_t, dtype=np.float64),
        np.asarray(h_prev, dtype=np.float64),
        np.asarray(c_prev, dtype=np.float64),
        params,
    )
    return h, c


def _lstm_seq(xs, params):
    """Run an LSTM over (B, W, D); returns all hidden states (B, W, H)."""
    batch, steps, _ = xs.shape
    cells = params["wh"].shape[0]
    h = np.zeros((batch, cells))
    c = np.zeros((batch, cells))
    hs = np.empty((batch, steps, cells))
    caches = []
    for t in range(steps):
        h, c, cache = _lstm_step(xs[:, t], h, c, params)
        hs[:, t] = h
        caches.append(cache)
    return hs, caches


def _lstm_seq_back(dhs, caches, params):
    """Backprop through time.  dhs holds the gradient into each step's output."""
    batch, steps, _ = dhs.shape
    din = params["wx"].shape[0]
    dxs = np.empty((batch, steps, din))
    dwx = np.zeros_like(params["wx"])
    dwh = np.zeros_like(params["wh"])
    db = np.zeros_like(params["b"])
    dh_next = np.zeros((batch, params["wh"].shape[0]))
    dc_next = np.zeros_like(dh_next)
    for t in range(steps - 1, -1, -1):
        dx, dh_next, dc_next, gwx, gwh, gb = _lstm_step_back(
            dhs[:, t] + dh_next, dc_next, caches[t], params
        )
        dxs[:, t] = dx
        dwx += gwx
        dwh += gwh
        db += gb
    return dxs, {"wx": dwx, "wh": dwh, "b": db}


def _conv_padding(kh, kw):
    return (kh - 1) // 2, kh - 1 - (kh - 1) // 2, (kw - 1) // 2, kw - 1 - (kw - 1) // 2


def _conv2d(x, kernels, bias):
    """Same-padded cross-correlation plus ReLU over (B, h, w, c_in)."""
    kh, kw, cin, cout = kernels.shape
    if x.ndim != 4 or x.shape[3] != cin or bias.shape != (cout,):
        raise ValueError(f"conv shape mismatch: x {x.shape}, kernels {kernels.shape}")
    top, bot, left, right = _conv_padding(kh, kw)
    xp = np.pad(x, ((0, 0), (top, bot), (left, right), (0, 0)))
    _, h, w, _ = x.shape
    z = np.tile(bias, (x.shape[0], h, w, 1))
    for u in range(kh):
        for v in range(kw):
            z += xp[:, u : u + h, v : v + w, :] @ kernels[u, v]
    out = np.maximum(z, 0.0)
    return out, (x, xp, kernels, out)


def _conv2d_back(dout, cache):
    x, xp, kernels, out = cache
    kh, kw, _, _ = kernels.shape
    _, h, w, _ = x.shape
    top, _, left, _ = _conv_padding(kh, kw)
    dz = dout * (out > 0.0)
    dk = np.zeros_like(kernels)
    dxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u : u + h, v : v + w, :]
            dk[u, v] = np.einsum("bhwc,bhwd->cd", patch, dz)
            dxp[:, u : u + h, v : v + w, :] += dz @ kernels[u, v].T
    dx = dxp[:, top : top + h, left : left + w, :]
    return dx, dk, dz.sum(axis=(0, 1, 2))


def conv2d_forward(x, kernels, bias):
    """Same-padded conv + ReLU; accepts (h, w, c_in) or a batched 4-D input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    out, _ = _conv2d(x, kernels, bias)
    return out[0] if single else out


def _maxpool(x):
    """Non-overlapping 2x2 max over (B, h, w, c); odd edges padded with -inf."""
    batch, h, w, ch = x.shape
    hp, wp = (h + 1) // 2, (w + 1) // 2
    xp = np.full((batch, hp * 2, wp * 2, ch), -np.inf)
    xp[:, :h, :w, :] = x
    xr = (
        xp.reshape(batch, hp, 2, wp, 2, ch)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(batch, hp, wp, ch, 4)
    )
    am = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, am[..., None], axis=-1)[..., 0]
    return out, (am, x.shape)


def _maxpool_back(dout, cache):
    am, xshape = cache
    batch, h, w, ch = xshape
    hp, wp = (h + 1) // 2, (w + 1) // 2
    dxr = np.zeros((batch, hp, wp, ch, 4))
    np.put_along_axis(dxr, am[..., None], dout[..., None], axis=-1)
    dxp = (
        dxr.reshape(batch, hp, wp, ch, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(batch, hp * 2, wp * 2, ch)
    )
    return dxp[:, :h, :w, :]


def maxpool2d(x):
    """2x2 max pooling; accepts (h, w, c) or a batched 4-D input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    out, _ = _maxpool(x)
    return out[0] if single else out


def _dropout(x, rate, training, rng):
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def _dropout_back(dout, mask, rate):
    if mask is None:
        return dout
    return dout * mask / (1.0 - rate)


def dropout_forward(x, rate, training=False, rng=None):
    """Inverted dropout: zero units with probability rate, rescale survivors."""
    if not (0.0 <= rate < 1.0):
        raise ValueError("dropout rate must lie in [0, 1)")
    out, _ = _dropout(np.asarray(x, dtype=np.float64), rate, training, rng)
    return out


# ---------------------------------------------------------------------------
# model assembly


def _glorot(rng, shape):
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:  # conv kernel (kh, kw, c_in, c_out)
        receptive = shape[0] * shape[1]
        fan_in, fan_out = receptive * shape[2], receptive * shape[3]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _lstm_params(rng, in_dim, cells):
    b = np.zeros(4 * cells)
    b[cells : 2 * cells] = 1.0  # forget-gate bias favours retention at init
    return {
        "wx": _glorot(rng, (in_dim, 4 * cells)),
        "wh": _glorot(rng, (cells, 4 * cells)),
        "b": b,
    }


def _conv_output_dim(config):
    vis = config.visual_input
    h, w = vis.height, vis.width
    for _ in config.conv_filters:
        h, w = (h + 1) // 2, (w + 1) // 2
    return h * w * config.conv_filters[-1]


def _visual_frame_dim(config):
    if isinstance(config.visual_input, VisualImage):
        return _conv_output_dim(config)
    return config.visual_embed_dim


def build_model(config: ModelConfig) -> RegressorModel:
    """Create a model with seeded Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(config.seed)
    params = {}

    def add(name, array):
        params[name] = array

    def add_lstm(name, in_dim, cells):
        p = _lstm_params(rng, in_dim, cells)
        for key in ("wx", "wh", "b"):
            add(f"{name}.{key}", p[key])

    if config.mode in ("a_only", "av"):
        add_lstm("audio_lstm1", config.audio_dim, config.audio_lstm_cells[0])
        add_lstm("audio_lstm2", config.audio_lstm_cells[0], config.audio_lstm_cells[1])
    if config.mode in ("v_only", "av"):
        if isinstance(config.visual_input, VisualImage):
            kh, kw = config.conv_kernel
            cin = 1
            for idx, cout in enumerate(config.conv_filters, start=1):
                add(f"conv{idx}.k", _glorot(rng, (kh, kw, cin, cout)))
                add(f"conv{idx}.b", np.zeros(cout))
                cin = cout
        else:
            add("visual_embed.w", _glorot(rng, (config.visual_input.dim, config.visual_embed_dim)))
            add("visual_embed.b", np.zeros(config.visual_embed_dim))
        add_lstm("visual_lstm", _visual_frame_dim(config), config.visual_lstm_cells)

    if config.mode == "a_only":
        head_in = config.audio_lstm_cells[1]
    elif config.mode == "v_only":
        head_in = config.visual_lstm_cells
    else:
        concat = config.audio_lstm_cells[1] + config.visual_lstm_cells
        add("fuse1.w", _glorot(rng, (concat, config.fusion_dense[0])))
        add("fuse1.b", np.zeros(config.fusion_dense[0]))
        add("fuse2.w", _glorot(rng, (config.fusion_dense[0], config.fusion_dense[1])))
        add("fuse2.b", np.zeros(config.fusion_dense[1]))
        head_in = config.fusion_dense[1]
    add("head.w", _glorot(rng, (head_in, config.output_dim)))
    add("head.b", np.zeros(config.output_dim))

    cache = {name: np.zeros_like(arr) for name, arr in params.items()}
    return RegressorModel(config=config, params=params, rmsprop_cache=cache)


def _check_inputs(config, audio, visual):
    if audio is not None:
        audio = np.asarray(audio, dtype=np.float64)
    if visual is not None:
        visual = np.asarray(visual, dtype=np.float64)
    if config.mode in ("a_only", "av"):
        if audio is None:
            raise ValueError(f"mode {config.mode} requires audio windows")
        if audio.ndim != 3 or audio.shape[1] != config.context_window \
                or audio.shape[2] != config.audio_dim:
            raise ValueError(
                f"audio windows must be (B, {config.context_window}, {config.audio_dim}), "
                f"got {audio.shape}"
            )
    if config.mode in ("v_only", "av"):
        if visual is None:
            raise ValueError(f"mode {config.mode} requires visual windows")
        if visual.shape[1] != config.context_window:
            raise ValueError(
                f"visual windows must have {config.context_window} context frames, "
                f"got shape {visual.shape}"
            )
        vis = config.visual_input
        if isinstance(vis, VisualImage):
            per_frame = (vis.height, vis.width)
            if visual.ndim == 3 and visual.shape[2] == vis.height * vis.width:
                visual = visual.reshape(visual.shape[0], visual.shape[1], *per_frame)
            if visual.shape[2:] != per_frame:
                raise ValueError(
                    f"visual frames must be {per_frame} images, got {visual.shape[2:]}"
                )
        else:
            if visual.ndim != 3 or visual.shape[2] != vis.dim:
                raise ValueError(
                    f"visual windows must be (B, W, {vis.dim}), got {visual.shape}"
                )
    return audio, visual


def _forward(model, audio=None, visual=None, training=False, rng=None):
    cfg = model.config
    p = model.params
    rate = cfg.dropout_rate
    audio, visual = _check_inputs(cfg, audio, visual)
    cache = {"mode": cfg.mode}

    audio_out = None
    if cfg.mode in ("a_only", "av"):
        lstm1 = {k: p[f"audio_lstm1.{k}"] for k in ("wx", "wh", "b")}
        lstm2 = {k: p[f"audio_lstm2.{k}"] for k in ("wx", "wh", "b")}
        hs1, c1 = _lstm_seq(audio, lstm1)
        hs1d, m1 = _dropout(hs1, rate, training, rng)
        hs2, c2 = _lstm_seq(hs1d, lstm2)
        h2 = hs2[:, -1]
        audio_out, m2 = _dropout(h2, rate, training, rng)
        cache["audio"] = (c1, m1, c2, m2, hs2.shape)

    visual_out = None
    if cfg.mode in ("v_only", "av"):
        batch, steps = visual.shape[0], visual.shape[1]
        if isinstance(cfg.visual_input, VisualImage):
            frames = visual.reshape(batch * steps, *visual.shape[2:], 1)
            conv_caches = []
            for idx in range(1, len(cfg.conv_filters) + 1):
                frames, cc = _conv2d(frames, p[f"conv{idx}.k"], p[f"conv{idx}.b"])
                frames, pc = _maxpool(frames)
                conv_caches.append((cc, pc))
            pooled_shape = frames.shape
            feats = frames.reshape(batch, steps, -1)
            cache["visual_frames"] = ("image", conv_caches, pooled_shape)
        else:
            flat = visual.reshape(batch * steps, -1)
            emb, ec = _dense(flat, p["visual_embed.w"], p["visual_embed.b"], "relu")
            feats = emb.reshape(batch, steps, -1)
            cache["visual_frames"] = ("vector", ec, None)
        lstmv = {k: p[f"visual_lstm.{k}"] for k in ("wx", "wh", "b")}
        hsv, cv = _lstm_seq(feats, lstmv)
        hv = hsv[:, -1]
        visual_out, mv = _dropout(hv, rate, training, rng)
        cache["visual"] = (cv, mv, hsv.shape)

    if cfg.mode == "a_only":
        pred, hc = _dense(audio_out, p["head.w"], p["head.b"], "linear")
        cache["head"] = hc
    elif cfg.mode == "v_only":
        pred, hc = _dense(visual_out, p["head.w"], p["head.b"], "linear")
        cache["head"] = hc
    else:
        joint = np.concatenate([audio_out, visual_out], axis=1)
        f1, c_f1 = _dense(joint, p["fuse1.w"], p["fuse1.b"], "tanh")
        f2, c_f2 = _dense(f1, p["fuse2.w"], p["fuse2.b"], "tanh")
        pred, hc = _dense(f2, p["head.w"], p["head.b"], "linear")
        cache["fusion"] = (c_f1, c_f2, audio_out.shape[1])
        cache["head"] = hc
    return pred, cache


def forward(model, audio=None, visual=None, training=False, rng=None):
    """Predict clean features for a batch of context windows, (B, M)."""
    pred, _ = _forward(model, audio, visual, training=training, rng=rng)
    return pred


def mse_loss(estimated, clean):
    """Half squared error summed over features, averaged over the batch."""
    estimated = np.asarray(estimated, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if estimated.shape != clean.shape:
        raise ValueError(f"shape mismatch: {estimated.shape} vs {clean.shape}")
    diff = estimated - clean
    return float(0.5 * np.sum(diff * diff) / estimated.shape[0])


def backward(model, targets, audio=None, visual=None, training=False, rng=None):
    """Loss and exact gradients of mse_loss w.r.t. every parameter."""
    cfg = model.config
    p = model.params
    rate = cfg.dropout_rate
    pred, cache = _forward(model, audio, visual, training=training, rng=rng)
    targets = np.asarray(targets, dtype=np.float64)
    loss = mse_loss(pred, targets)
    grads = {}
    dpred = (pred - targets) / pred.shape[0]

    if cfg.mode == "av":
        dfused, grads["head.w"], grads["head.b"] = _dense_back(dpred, cache["head"])
        c_f1, c_f2, audio_width = cache["fusion"]
        df1, grads["fuse2.w"], grads["fuse2.b"] = _dense_back(dfused, c_f2)
        djoint, grads["fuse1.w"], grads["fuse1.b"] = _dense_back(df1, c_f1)
        d_audio_out = djoint[:, :audio_width]
        d_visual_out = djoint[:, audio_width:]
    else:
        dbranch, grads["head.w"], grads["head.b"] = _dense_back(dpred, cache["head"])
        d_audio_out = dbranch if cfg.mode == "a_only" else None
        d_visual_out = dbranch if cfg.mode == "v_only" else None

    if d_audio_out is not None:
        c1, m1, c2, m2, hs2_shape = cache["audio"]
        dh2 = _dropout_back(d_audio_out, m2, rate)
        dhs2 = np.zeros(hs2_shape)
        dhs2[:, -1] = dh2
        lstm2 = {k: p[f"audio_lstm2.{k}"] for k in ("wx", "wh", "b")}
        dhs1d, g2 = _lstm_seq_back(dhs2, c2, lstm2)
        for key, val in g2.items():
            grads[f"audio_lstm2.{key}"] = val
        dhs1 = _dropout_back(dhs1d, m1, rate)
        lstm1 = {k: p[f"audio_lstm1.{k}"] for k in ("wx", "wh", "b")}
        _, g1 = _lstm_seq_back(dhs1, c1, lstm1)
        for key, val in g1.items():
            grads[f"audio_lstm1.{key}"] = val

    if d_visual_out is not None:
        cv, mv, hsv_shape = cache["visual"]
        dhv = _dropout_back(d_visual_out, mv, rate)
        dhsv = np.zeros(hsv_shape)
        dhsv[:, -1] = dhv
        lstmv = {k: p[f"visual_lstm.{k}"] for k in ("wx", "wh", "b")}
        dfeats, gv = _lstm_seq_back(dhsv, cv, lstmv)
        for key, val in gv.items():
            grads[f"visual_lstm.{key}"] = val
        kind, frame_cache, pooled_shape = cache["visual_frames"]
        if kind == "image":
            dframes = dfeats.reshape(pooled_shape)
            for idx in range(len(cfg.conv_filters), 0, -1):
                cc, pc = frame_cache[idx - 1]
                dframes = _maxpool_back(dframes, pc)
                dframes, dk, db = _conv2d_back(dframes, cc)
                grads[f"conv{idx}.k"] = dk
                grads[f"conv{idx}.b"] = db
        else:
            demb = dfeats.reshape(-1, dfeats.shape[-1])
            _, grads["visual_embed.w"], grads["visual_embed.b"] = _dense_back(
                demb, frame_cache
            )

    return loss, grads


def rmsprop_step(model, grads, cfg: TrainConfig):
    """In-place RMSProp update of parameters and the squared-gradient cache."""
    if set(grads) != set(model.params):
        missing = set(model.params) ^ set(grads)
        raise ValueError(f"gradient/parameter name mismatch: {sorted(missing)}")
    rho, lr, eps = cfg.rmsprop_rho, cfg.learning_rate, cfg.rmsprop_eps
    for name, g in grads.items():
        if g.shape != model.params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        cache = model.rmsprop_cache[name]
        cache *= rho
        cache += (1.0 - rho) * g * g
        model.params[name] -= lr * g / (np.sqrt(cache) + eps)


def make_context_windows(features, window: int) -> np.ndarray:
    """Stack each frame with its W-1 predecessors; early frames repeat frame 0.

    Output shape is (T, W, M): one window per input frame.
    """
    vectors = features.vectors if isinstance(features, FeatureSequence) else np.asarray(features)
    if window < 1:
        raise ValueError("window must be >= 1")
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("features must be a nonempty (T, M) sequence")
    padded = np.concatenate([np.repeat(vectors[:1], window - 1, axis=0), vectors])
    return np.stack([padded[t : t + window] for t in range(vectors.shape[0])])


def _subset(data: WindowDataset, idx):
    audio = data.audio[idx] if data.audio is not None else None
    visual = data.visual[idx] if data.visual is not None else None
    return audio, visual, data.targets[idx]


def _eval_mse(model, data, idx, batch_size):
    total = 0.0
    for start in range(0, len(idx), batch_size):
        chunk = idx[start : start + batch_size]
        audio, visual, targets = _subset(data, chunk)
        pred, _ = _forward(model, audio, visual, training=False)
        diff = pred - targets
        total += 0.5 * np.sum(diff * diff)
    return float(total / len(idx))


def train(model, data: WindowDataset, split, cfg: TrainConfig):
    """Minibatch RMSProp training.

    ``split`` is a pair (train_indices, val_indices).  Returns the history as
    a list of (epoch, train_mse, val_mse) with epoch 0 recording the initial
    model; the model ends up holding the parameters of the epoch with the
    lowest validation MSE.
    """
    train_idx = np.asarray(split[0], dtype=np.int64)
    val_idx = np.asarray(split[1], dtype=np.int64)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("train and validation splits must both be nonempty")

    rng = np.random.default_rng(cfg.seed)
    history = [(0, _eval_mse(model, data, train_idx, cfg.batch_size),
                _eval_mse(model, data, val_idx, cfg.batch_size))]
    best_val = history[0][2]
    best_params = {k: v.copy() for k, v in model.params.items()}

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(train_idx)
        for start in range(0, len(perm), cfg.batch_size):
            chunk = perm[start : start + cfg.batch_size]
            audio, visual, targets = _subset(data, chunk)
            loss, grads = backward(model, targets, audio, visual, training=True, rng=rng)
            if not np.isfinite(loss):
                raise NumericFailureError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            rmsprop_step(model, grads, cfg)
        train_mse = _eval_mse(model, data, train_idx, cfg.batch_size)
        val_mse = _eval_mse(model, data, val_idx, cfg.batch_size)
        history.append((epoch, train_mse, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in model.params.items()}

    model.params = best_params
    return history


# ---------------------------------------------------------------------------
# checkpoint I/O


def _config_to_dict(cfg: ModelConfig) -> dict:
    vis = cfg.visual_input
    if isinstance(vis, VisualImage):
        visual = {"kind": "image", "height": vis.height, "width": vis.width}
    else:
        visual = {"kind": "vector", "dim": vis.dim}
    return {
        "mode": cfg.mode,
        "context_window": cfg.context_window,
        "audio_dim": cfg.audio_dim,
        "visual_input": visual,
        "conv_filters": list(cfg.conv_filters),
        "conv_kernel": list(cfg.conv_kernel),
        "pool": list(cfg.pool),
        "visual_lstm_cells": cfg.visual_lstm_cells,
        "audio_lstm_cells": list(cfg.audio_lstm_cells),
        "fusion_dense": list(cfg.fusion_dense),
        "visual_embed_dim": cfg.visual_embed_dim,
        "output_dim": cfg.output_dim,
        "dropout_rate": cfg.dropout_rate,
        "seed": cfg.seed,
    }


def _config_from_dict(d: dict) -> ModelConfig:
    try:
        vis = d["visual_input"]
        if vis["kind"] == "image":
            visual = VisualImage(int(vis["height"]), int(vis["width"]))
        elif vis["kind"] == "vector":
            visual = VisualVector(int(vis["dim"]))
        else:
            raise DataFormatError(f"unknown visual input kind {vis['kind']!r}")
        return ModelConfig(
            mode=d["mode"],
            context_window=int(d["context_window"]),
            audio_dim=int(d["audio_dim"]),
            visual_input=visual,
            conv_filters=tuple(d["conv_filters"]),
            conv_kernel=tuple(d["conv_kernel"]),
            pool=tuple(d["pool"]),
            visual_lstm_cells=int(d["visual_lstm_cells"]),
            audio_lstm_cells=tuple(d["audio_lstm_cells"]),
            fusion_dense=tuple(d["fusion_dense"]),
            visual_embed_dim=int(d["visual_embed_dim"]),
            output_dim=int(d["output_dim"]),
            dropout_rate=float(d["dropout_rate"]),
            seed=int(d["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"invalid checkpoint config: {exc}") from exc


def save_checkpoint(model: RegressorModel, path) -> None:
    """Serialize config and parameters (float32 payload) to an EVWM1 file."""
    blob = bytearray(CHECKPOINT_MAGIC)
    cfg_json = json.dumps(_config_to_dict(model.config), sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg_json))
    blob += cfg_json
    blob += struct.pack("<I", len(model.params))
    for name, arr in model.params.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    atomic_write_bytes(path, bytes(blob))


class _Cursor:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DataFormatError(
                f"{self.path}: truncated checkpoint "
                f"(needed {self.pos + n} bytes, file has {len(self.data)})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> RegressorModel:
    """Load an EVWM1 checkpoint, validating names and shapes against the config."""
    data = Path(path).read_bytes()
    cur = _Cursor(data, path)
    if cur.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic")
    (cfg_len,) = cur.unpack("<I")
    try:
        cfg_dict = json.loads(cur.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable config block: {exc}") from exc
    config = _config_from_dict(cfg_dict)

    model = build_model(config)
    (n_params,) = cur.unpack("<I")
    if n_params != len(model.params):
        raise DataFormatError(
            f"{path}: checkpoint has {n_params} parameters, config implies {len(model.params)}"
        )
    loaded = {}
    for _ in range(n_params):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        (ndim,) = cur.unpack("<B")
        shape = cur.unpack(f"<{ndim}I")
        if name not in model.params:
            raise DataFormatError(f"{path}: unexpected parameter {name!r}")
        if shape != model.params[name].shape:
            raise DataFormatError(
                f"{path}: parameter {name!r} has shape {shape}, "
                f"config implies {model.params[name].shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        values = np.frombuffer(cur.take(4 * count), dtype="<f4").astype(np.float64)
        loaded[name] = values.reshape(shape)
    if cur.pos != len(data):
        raise DataFormatError(f"{path}: {len(data) - cur.pos} trailing bytes")
    model.params = loaded
    model.rmsprop_cache = {k: np.zeros_like(v) for k, v in loaded.items()}
    return model
