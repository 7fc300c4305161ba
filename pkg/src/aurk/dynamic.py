"""Temporal extensions: RoI timelines, a ConvLSTM sequence head and two-stream fusion.

A timeline follows one box row (one AU-group line) across frames that are
``skip + 1`` frames apart. Every line has its own ConvLSTM kernels; the two
fully-connected layers after the recurrence are shared by all lines.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from aurk.errors import FormatError, InsufficientFramesError, ShapeError
from aurk.nn import ops
from aurk.nn.ops import Param, sigmoid
from aurk.nn.roi_pool import roi_pool_backward, roi_pool_forward

# ----------------------------------------------------------------------------
# timelines


def required_frames(skip: int, T: int) -> int:
    return (T - 1) * (skip + 1) + 1


def timeline_indices(n_frames: int, skip: int = 4, T: int = 10, start: int = 0) -> np.ndarray:
    """Frame numbers ``start, start + (skip+1), ...`` of one window."""
    if skip < 0 or T < 1:
        raise ValueError("skip must be >= 0 and T >= 1")
    need = required_frames(skip, T)
    if start < 0 or n_frames - start < need:
        raise InsufficientFramesError(f"{n_frames} frames from {start}: a window needs {need}")
    return start + np.arange(T) * (skip + 1)


def window_starts(n_frames: int, skip: int = 4, T: int = 10, stride: int | None = None,
                  offset: int = 0) -> list[int]:
    """Start frames of windows tiling a video; default stride ``T * (skip+1)``."""
    stride = T * (skip + 1) if stride is None else stride
    if stride < 1:
        raise ValueError("window stride must be >= 1")
    last = n_frames - required_frames(skip, T)
    if last < 0:
        raise InsufficientFramesError(f"{n_frames} frames: a window needs {required_frames(skip, T)}")
    return list(range(offset % stride if offset else 0, last + 1, stride))


def causal_indices(t: int, skip: int = 4, T: int = 10) -> np.ndarray:
    """Window ending at frame ``t``; frames before the video start repeat frame 0."""
    return np.maximum(t - (T - 1 - np.arange(T)) * (skip + 1), 0)


@dataclass
class TimelineBatch:
    group_id: int
    side: str
    tensor: np.ndarray   # (N, T, C, H, W)
    frames: np.ndarray   # (N, T) source frame numbers

    def __post_init__(self):
        if self.tensor.ndim != 5:
            raise ShapeError("timeline tensor must be (N, T, C, H, W)")


def build_timelines(video: np.ndarray, slots, skip: int = 4, T: int = 10,
                    starts=None) -> list[TimelineBatch]:
    """Cut ``video (F, R, C, H, W)`` per-frame RoI features into one batch per line.

    ``starts`` lists window start frames (default: the single window at 0);
    each becomes one batch entry.
    """
    v = np.asarray(video)
    if v.ndim != 5:
        raise ShapeError("video features must be (frames, R, C, H, W)")
    if len(slots) != v.shape[1]:
        raise ShapeError(f"{len(slots)} slots for {v.shape[1]} RoI rows")
    starts = [0] if starts is None else list(starts)
    frames = np.stack([timeline_indices(len(v), skip, T, s) for s in starts])
    return [TimelineBatch(gid, side, v[frames, r], frames) for r, (gid, side) in enumerate(slots)]


# ----------------------------------------------------------------------------
# ConvLSTM cell: gates = conv([x, h]) ordered i, f, o, g


@dataclass
class ConvLSTMState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"h {self.h.shape} and c {self.c.shape} differ")

    @classmethod
    def zeros(cls, n: int, hidden: int, height: int, width: int) -> ConvLSTMState:
        return cls(np.zeros((n, hidden, height, width)), np.zeros((n, hidden, height, width)))


def init_cell(rng: np.random.Generator, in_ch: int, hidden: int, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``(4*hidden, in_ch + hidden, k, k)`` and biases with forget bias 1."""
    w = rng.normal(0.0, np.sqrt(1.0 / ((in_ch + hidden) * k * k)), size=(4 * hidden, in_ch + hidden, k, k))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return w, b


def convlstm_cell_forward(x: np.ndarray, state: ConvLSTMState, w: np.ndarray, b: np.ndarray):
    """One step. Returns ``(new_state, cache)``."""
    if x.ndim != 4 or x.shape[0] != state.h.shape[0] or x.shape[2:] != state.h.shape[2:]:
        raise ShapeError(f"input {x.shape} does not match state {state.h.shape}")
    hid = state.h.shape[1]
    if w.shape[0] != 4 * hid or w.shape[1] != x.shape[1] + hid:
        raise ShapeError(f"cell weights {w.shape} do not fit input {x.shape[1]} / hidden {hid}")
    k = w.shape[2]
    z, cc = ops.conv2d_forward(np.concatenate([x, state.h], axis=1), w, b, 1, k // 2)
    i = sigmoid(z[:, :hid])
    f = sigmoid(z[:, hid:2 * hid])
    o = sigmoid(z[:, 2 * hid:3 * hid])
    g = np.tanh(z[:, 3 * hid:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    return ConvLSTMState(h, c), (cc, x.shape[1], state.c, i, f, o, g, tc)


def convlstm_cell_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Returns ``(dx, dh_prev, dc_prev, dw, db)``."""
    cc, cin, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
    dxh, dw, db = ops.conv2d_backward(dz, cc)
    return dxh[:, :cin], dxh[:, cin:], dc_prev, dw, db


# ----------------------------------------------------------------------------
# sequence head


def fold_time(seq: np.ndarray) -> np.ndarray:
    """``(N, T, C, H, W) -> (N*T, C*H*W)``, sample-major."""
    n, t = seq.shape[:2]
    return seq.reshape(n * t, -1)


def unfold_time(flat: np.ndarray, n: int, t: int, chw: tuple[int, int, int]) -> np.ndarray:
    return flat.reshape((n, t) + tuple(chw))


@dataclass
class ConvLSTMHeadConfig:
    in_channels: int
    spatial: tuple[int, int]
    n_lines: int
    n_labels: int
    hidden_channels: int = 8
    kernel: int = 3
    fc_hidden: int = 64
    residual: bool = False     # feed x_t + h_t to the FC layers (needs hidden == in)
    cell_init_scale: float = 1.0

    def __post_init__(self):
        if self.residual and self.hidden_channels != self.in_channels:
            raise ShapeError("a residual head needs hidden_channels == in_channels")


def init_head_params(cfg: ConvLSTMHeadConfig, rng: np.random.Generator,
                     fc_init: dict[str, np.ndarray] | None = None) -> dict[str, Param]:
    """Per-line cells plus shared FC layers, optionally copied from ``fc_init``."""
    p: dict[str, Param] = {}
    for r in range(cfg.n_lines):
        w, b = init_cell(rng, cfg.in_channels, cfg.hidden_channels, cfg.kernel)
        p[f"cell{r}.w"] = Param(w * cfg.cell_init_scale)
        p[f"cell{r}.b"] = Param(b)
    d = cfg.hidden_channels * cfg.spatial[0] * cfg.spatial[1]
    if fc_init is not None:
        for k in ("fc1.w", "fc1.b", "fc2.w", "fc2.b"):
            p[k] = Param(np.array(fc_init[k], dtype=np.float64))
        if p["fc1.w"].shape[0] != d or p["fc2.w"].shape[1] != cfg.n_labels:
            raise ShapeError("FC initialisation does not fit the head configuration")
        return p
    p["fc1.w"] = Param(ops.he_init(rng, (d, cfg.fc_hidden), d))
    p["fc1.b"] = Param(np.zeros(cfg.fc_hidden))
    p["fc2.w"] = Param(rng.normal(0.0, 0.01, size=(cfg.fc_hidden, cfg.n_labels)))
    p["fc2.b"] = Param(np.zeros(cfg.n_labels))
    return p


def convlstm_head_forward(seq: np.ndarray, line: int, params: dict[str, Param], residual: bool = False):
    """Run line ``line``'s cell over ``seq (N, T, C, H, W)``; logits ``(N*T, L)``.

    With ``residual`` the FC layers see ``x_t + h_t`` instead of ``h_t``.
    """
    n, t, _, hh, ww = seq.shape
    w = params[f"cell{line}.w"].value
    hid = w.shape[0] // 4
    state = ConvLSTMState.zeros(n, hid, hh, ww)
    cells, hs = [], []
    for s in range(t):
        state, c = convlstm_cell_forward(seq[:, s], state, w, params[f"cell{line}.b"].value)
        cells.append(c)
        hs.append(state.h)
    out = np.stack(hs, axis=1)
    if residual:
        out = out + seq
    flat = fold_time(out)
    a, c1 = ops.linear_forward(flat, params["fc1.w"].value, params["fc1.b"].value)
    a, rm = ops.relu_forward(a)
    logits, c2 = ops.linear_forward(a, params["fc2.w"].value, params["fc2.b"].value)
    return logits, (line, n, t, (hid, hh, ww), cells, c1, rm, c2, residual)


def convlstm_head_backward(dlogits: np.ndarray, cache, params: dict[str, Param]) -> np.ndarray:
    """Back-propagate through time; accumulates grads, returns ``dseq``."""
    line, n, t, chw, cells, c1, rm, c2, residual = cache
    da, dw2, db2 = ops.linear_backward(dlogits, c2)
    params["fc2.w"].grad += dw2
    params["fc2.b"].grad += db2
    dflat, dw1, db1 = ops.linear_backward(ops.relu_backward(da, rm), c1)
    params["fc1.w"].grad += dw1
    params["fc1.b"].grad += db1
    dhs = unfold_time(dflat, n, t, chw)
    dh_next = np.zeros((n,) + chw)
    dc_next = np.zeros((n,) + chw)
    dxs = []
    for s in reversed(range(t)):
        dx, dh_next, dc_next, dw, db = convlstm_cell_backward(dhs[:, s] + dh_next, dc_next, cells[s])
        params[f"cell{line}.w"].grad += dw
        params[f"cell{line}.b"].grad += db
        dxs.append(dx)
    dseq = np.stack(dxs[::-1], axis=1)
    return dseq + dhs if residual else dseq


def last_step(logits: np.ndarray, n: int, t: int) -> np.ndarray:
    """Rows of the final time-step: the prediction used at inference."""
    return logits.reshape(n, t, -1)[:, -1]


# ----------------------------------------------------------------------------
# two-stream fusion


def init_fuse(channels: int) -> tuple[np.ndarray, np.ndarray]:
    """1x1 kernel that passes the RGB half through and ignores the flow half."""
    w = np.zeros((channels, 2 * channels, 1, 1))
    w[np.arange(channels), np.arange(channels), 0, 0] = 1.0
    return w, np.zeros(channels)


def two_stream_fuse_forward(rgb: np.ndarray, flow: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Concatenate along channels and mix back to ``C`` with a 1x1 convolution."""
    if rgb.shape != flow.shape or rgb.ndim != 4:
        raise ShapeError(f"RGB features {rgb.shape} and flow features {flow.shape} must match")
    c = rgb.shape[1]
    if w.shape != (c, 2 * c, 1, 1):
        raise ShapeError(f"fusion kernel must be ({c}, {2 * c}, 1, 1), got {w.shape}")
    out, cache = ops.conv2d_forward(np.concatenate([rgb, flow], axis=1), w, b, 1, 0)
    return out, (cache, c)


def two_stream_fuse_backward(dout: np.ndarray, cache):
    """Returns ``(drgb, dflow, dw, db)``."""
    cc, c = cache
    dx, dw, db = ops.conv2d_backward(dout, cc)
    return dx[:, :c], dx[:, c:], dw, db


class TwoStreamRCNN:
    """Static detector plus a flow backbone; RoI features are fused before the head."""

    def __init__(self, static, flow_channels: int = 20, seed: int = 0):
        from aurk.nn.model import AURCNN, BackboneSpec, ModelConfig

        bb = static.cfg.backbone
        self.static = static
        fcfg = ModelConfig(static.cfg.n_labels, BackboneSpec(bb.layers, flow_channels),
                           static.cfg.roi_size, static.cfg.hidden)
        self.flow = AURCNN(fcfg, seed=seed)
        w, b = init_fuse(bb.out_channels)
        self.fuse_w = Param(w)
        self.fuse_b = Param(b)

    @property
    def params(self) -> dict[str, Param]:
        p = {f"rgb.{k}": v for k, v in self.static.params.items()}
        p.update({f"flow.{k}": v for k, v in self.flow.params.items() if k.startswith("conv")})
        p["fuse.w"] = self.fuse_w
        p["fuse.b"] = self.fuse_b
        return p

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, images: np.ndarray, flows: np.ndarray, boxes: np.ndarray):
        fr, cr = self.static.features(images)
        ff, cf = self.flow.features(flows)
        spec = self.static.roi_spec(boxes)
        pr, pcr = roi_pool_forward(fr, spec)
        pf, pcf = roi_pool_forward(ff, spec)
        fused, cfu = two_stream_fuse_forward(pr, pf, self.fuse_w.value, self.fuse_b.value)
        logits, hc = self.static.head(fused)
        return logits, (cr, cf, pcr, pcf, cfu, hc)

    def backward(self, dlogits: np.ndarray, cache) -> None:
        cr, cf, pcr, pcf, cfu, hc = cache
        dfused = self.static.head_backward(dlogits, hc)
        dpr, dpf, dw, db = two_stream_fuse_backward(dfused, cfu)
        self.fuse_w.grad += dw
        self.fuse_b.grad += db
        self.static.features_backward(roi_pool_backward(dpr, pcr), cr)
        self.flow.features_backward(roi_pool_backward(dpf, pcf), cf)


# ----------------------------------------------------------------------------
# flow files: b"AURKFLOW", u32 version, u32 frames, u32 height, u32 width,
# 2-byte dtype code ("f4" or "i2"), f64 scale, then frames*2*H*W little-endian
# values; stored = round(flow * scale) for "i2", flow * scale for "f4".

FLOW_MAGIC = b"AURKFLOW"
FLOW_VERSION = 1
_FLOW_HEADER = "<8sIIII2sd"


def write_flow_file(path: str | Path, flow: np.ndarray, dtype: str = "f4", scale: float = 1.0) -> None:
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 4 or f.shape[1] != 2:
        raise ShapeError("flow must be (frames, 2, H, W)")
    if dtype == "f4":
        data = (f * scale).astype("<f4")
    elif dtype == "i2":
        data = np.clip(np.rint(f * scale), -32768, 32767).astype("<i2")
    else:
        raise ValueError("flow dtype must be 'f4' or 'i2'")
    n, _, h, w = f.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(_FLOW_HEADER, FLOW_MAGIC, FLOW_VERSION, n, h, w, dtype.encode(), scale))
        fh.write(data.tobytes())


def read_flow_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    size = struct.calcsize(_FLOW_HEADER)
    if len(raw) < size:
        raise FormatError(f"{path}: truncated flow header")
    magic, version, n, h, w, code, scale = struct.unpack_from(_FLOW_HEADER, raw)
    if magic != FLOW_MAGIC:
        raise FormatError(f"{path}: not a flow file")
    if version != FLOW_VERSION:
        raise FormatError(f"{path}: flow format version {version}, expected {FLOW_VERSION}")
    dt = {b"f4": "<f4", b"i2": "<i2"}.get(code)
    if dt is None:
        raise FormatError(f"{path}: unknown flow dtype {code!r}")
    count = n * 2 * h * w
    if len(raw) - size != count * np.dtype(dt).itemsize:
        raise FormatError(f"{path}: payload size does not match {n}x2x{h}x{w}")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=size).astype(np.float64)
    return data.reshape(n, 2, h, w) / scale


def flow_stack(flow: np.ndarray, t: int, length: int = 10) -> np.ndarray:
    """``(2*length, H, W)`` stack of the ``length`` flow frames centred on ``t``.

    Indices outside the video are clamped to the nearest frame.
    """
    idx = np.clip(t - length // 2 + np.arange(length), 0, len(flow) - 1)
    return flow[idx].reshape(2 * length, *flow.shape[2:])


def difference_flow(images: np.ndarray, subjects=None) -> np.ndarray:
    """Cheap motion proxy: temporal grey-level difference in both channels.

    Used where no real optical flow exists (synthetic data); the first frame of
    each video gets zero flow.
    """
    g = np.asarray(images, dtype=np.float64).mean(axis=1)
    d = np.zeros_like(g)
    d[1:] = g[1:] - g[:-1]
    if subjects is not None:
        s = np.asarray(subjects)
        d[np.flatnonzero(np.r_[True, s[1:] != s[:-1]])] = 0.0
    return np.stack([d, d], axis=1)


# ----------------------------------------------------------------------------
# training on frozen per-frame RoI features


@dataclass
class DynamicConfig:
    skip: int = 4
    T: int = 10
    window_stride: int | None = None   # training windows; None -> T * (skip + 1)
    hidden_channels: int | None = None  # None -> same as the RoI features
    kernel: int = 3
    fc_hidden: int = 64
    residual: bool = True
    cell_init_scale: float = 0.1
    epochs: int = 25
    batch_size: int = 1
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay: float = 0.1
    lr_step: int = 10
    seed: int = 0


def _videos(subjects: np.ndarray) -> list[np.ndarray]:
    s = np.asarray(subjects)
    return [np.flatnonzero(s == v) for v in dict.fromkeys(s.tolist())]


def _line_logits(feats: np.ndarray, frames: np.ndarray, params: dict[str, Param], residual: bool):
    """Run every line over windows ``frames (N, T)`` of ``feats (F, R, C, H, W)``."""
    outs, caches = [], []
    for r in range(feats.shape[1]):
        lg, c = convlstm_head_forward(feats[frames, r], r, params, residual)
        outs.append(lg)
        caches.append(c)
    return outs, caches


def head_config(feats_shape, n_labels: int, cfg: DynamicConfig, fc_hidden: int | None = None) -> ConvLSTMHeadConfig:
    _, r, c, hh, ww = feats_shape
    return ConvLSTMHeadConfig(c, (hh, ww), r, n_labels, cfg.hidden_channels or c, cfg.kernel,
                              fc_hidden or cfg.fc_hidden, cfg.residual, cfg.cell_init_scale)


def train_convlstm(feats: np.ndarray, roi_labels: np.ndarray, subjects: np.ndarray, n_labels: int,
                   cfg: DynamicConfig, params: dict[str, Param] | None = None,
                   fc_init: dict[str, np.ndarray] | None = None):
    """Fit per-line ConvLSTM heads on frozen features ``(F, R, C, H, W)``.

    Windows tile each video with ``cfg.window_stride``; the tiling phase is
    redrawn every epoch so all frames get visited. Every time-step of every
    window is supervised. ``fc_init`` seeds the shared FC layers, normally
    with the static detector's head. Returns ``(params, epoch_losses)``.
    """
    from aurk.nn.loss import sigmoid_ce_loss
    from aurk.nn.optim import OptimState, lr_schedule, sgd_momentum_step

    rng = np.random.default_rng(cfg.seed)
    r = feats.shape[1]
    fc_hidden = fc_init["fc1.w"].shape[1] if fc_init is not None else None
    hcfg = head_config(feats.shape, n_labels, cfg, fc_hidden)
    params = params if params is not None else init_head_params(hcfg, rng, fc_init)
    state = OptimState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    stride = cfg.window_stride or cfg.T * (cfg.skip + 1)
    videos = _videos(subjects)
    losses = []
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        state.lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_decay, cfg.lr_step)
        windows = []
        for idx in videos:
            if len(idx) < required_frames(cfg.skip, cfg.T):
                continue
            phase = int(rng.integers(0, stride))
            for s in window_starts(len(idx), cfg.skip, cfg.T, stride):
                s2 = s + phase
                if s2 + required_frames(cfg.skip, cfg.T) <= len(idx):
                    s = s2
                windows.append(idx[timeline_indices(len(idx), cfg.skip, cfg.T, s)])
        if not windows:
            raise InsufficientFramesError("no video is long enough for one window")
        windows = np.stack(windows)[rng.permutation(len(windows))]
        total = 0.0
        for b0 in range(0, len(windows), cfg.batch_size):
            fr = windows[b0:b0 + cfg.batch_size]
            for p in params.values():
                p.zero_grad()
            outs, caches = _line_logits(feats, fr, params, cfg.residual)
            y = np.concatenate([roi_labels[fr, k].reshape(-1, n_labels) for k in range(r)])
            loss, grad = sigmoid_ce_loss(np.concatenate(outs), y)
            rows = len(outs[0])
            for k in range(r):
                convlstm_head_backward(grad[k * rows:(k + 1) * rows], caches[k], params)
            sgd_momentum_step(params, state)
            total += loss * len(fr)
        losses.append(total / len(windows))
    return params, losses


def convlstm_predict_logits(feats: np.ndarray, subjects: np.ndarray, params: dict[str, Param],
                            cfg: DynamicConfig, batch: int = 64) -> np.ndarray:
    """``(F, R, L)`` logits; frame ``t`` is the last step of the window ending at ``t``."""
    f, r = feats.shape[:2]
    out = None
    for idx in _videos(subjects):
        wins = np.stack([idx[causal_indices(t, cfg.skip, cfg.T)] for t in range(len(idx))])
        for b0 in range(0, len(wins), batch):
            fr = wins[b0:b0 + batch]
            outs, _ = _line_logits(feats, fr, params, cfg.residual)
            last = np.stack([last_step(o, len(fr), cfg.T) for o in outs], axis=1)
            if out is None:
                out = np.zeros((f, r, last.shape[2]))
            out[fr[:, -1]] = last
    return out
