"""Region-based AU detector: small conv backbone, RoI pooling, two FC layers.

The backbone is a stack of ReLU convolutions whose strides multiply to the
feature stride (16 by default). Boxes are given in image pixels and divided
by the stride before pooling. Each RoI row produces ``L`` logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aurk.errors import ShapeError
from aurk.nn import ops
from aurk.nn.ops import Param
from aurk.nn.roi_pool import RoISpec, roi_pool_backward, roi_pool_forward


@dataclass(frozen=True)
class BackboneSpec:
    """One ``(out_channels, kernel, stride, pad)`` tuple per conv layer."""

    layers: tuple[tuple[int, int, int, int], ...] = ((16, 4, 4, 0), (32, 4, 4, 0))
    in_channels: int = 3

    @property
    def stride(self) -> int:
        s = 1
        for _, _, st, _ in self.layers:
            s *= st
        return s

    @property
    def out_channels(self) -> int:
        return self.layers[-1][0] if self.layers else self.in_channels


BACKBONES = {
    "tiny16": BackboneSpec(),
    "tiny8": BackboneSpec(layers=((16, 4, 4, 0), (32, 3, 2, 1))),
}


@dataclass
class ModelConfig:
    n_labels: int
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    roi_size: tuple[int, int] = (7, 7)
    hidden: int = 64


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Param]:
    """He-normal weights, zero biases; insertion order is the checkpoint order."""
    p: dict[str, Param] = {}
    cin = cfg.backbone.in_channels
    for i, (cout, k, _, _) in enumerate(cfg.backbone.layers):
        fan = cin * k * k
        p[f"conv{i}.w"] = Param(ops.he_init(rng, (cout, cin, k, k), fan))
        p[f"conv{i}.b"] = Param(np.zeros(cout))
        cin = cout
    d = cin * cfg.roi_size[0] * cfg.roi_size[1]
    p["fc1.w"] = Param(ops.he_init(rng, (d, cfg.hidden), d))
    p["fc1.b"] = Param(np.zeros(cfg.hidden))
    p["fc2.w"] = Param(rng.normal(0.0, 0.01, size=(cfg.hidden, cfg.n_labels)))
    p["fc2.b"] = Param(np.zeros(cfg.n_labels))
    return p


class AURCNN:
    """Holds parameters; ``forward`` and ``backward`` are pure w.r.t. the caches."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Param] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))

    # -- backbone ---------------------------------------------------------
    def features(self, images: np.ndarray):
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.cfg.backbone.in_channels:
            raise ShapeError(f"expected (N, {self.cfg.backbone.in_channels}, H, W) images, got {x.shape}")
        caches = []
        for i, (_, _, stride, pad) in enumerate(self.cfg.backbone.layers):
            x, cc = ops.conv2d_forward(x, self.params[f"conv{i}.w"].value, self.params[f"conv{i}.b"].value,
                                       stride, pad)
            x, rc = ops.relu_forward(x)
            caches.append((cc, rc))
        return x, caches

    def features_backward(self, dfeat: np.ndarray, caches) -> None:
        d = dfeat
        for i in reversed(range(len(caches))):
            cc, rc = caches[i]
            d = ops.relu_backward(d, rc)
            d, dw, db = ops.conv2d_backward(d, cc)
            self.params[f"conv{i}.w"].grad += dw
            self.params[f"conv{i}.b"].grad += db

    # -- RoI head ---------------------------------------------------------
    def roi_spec(self, boxes: np.ndarray) -> RoISpec:
        """``boxes (N, R, 4)`` image-space -> feature-space spec, rows ordered image-major."""
        b = np.asarray(boxes, dtype=np.float64)
        if b.ndim != 3 or b.shape[2] != 4:
            raise ShapeError(f"boxes must be (N, R, 4), got {b.shape}")
        n, r, _ = b.shape
        return RoISpec(b.reshape(-1, 4) / self.cfg.backbone.stride, np.repeat(np.arange(n), r), self.cfg.roi_size)

    def pool(self, fmap: np.ndarray, boxes: np.ndarray):
        return roi_pool_forward(fmap, self.roi_spec(boxes))

    def head(self, pooled: np.ndarray):
        x = pooled.reshape(len(pooled), -1)
        h, c1 = ops.linear_forward(x, self.params["fc1.w"].value, self.params["fc1.b"].value)
        h, rm = ops.relu_forward(h)
        logits, c2 = ops.linear_forward(h, self.params["fc2.w"].value, self.params["fc2.b"].value)
        return logits, (pooled.shape, c1, rm, c2)

    def head_backward(self, dlogits: np.ndarray, cache) -> np.ndarray:
        shape, c1, rm, c2 = cache
        dh, dw2, db2 = ops.linear_backward(dlogits, c2)
        self.params["fc2.w"].grad += dw2
        self.params["fc2.b"].grad += db2
        dh = ops.relu_backward(dh, rm)
        dx, dw1, db1 = ops.linear_backward(dh, c1)
        self.params["fc1.w"].grad += dw1
        self.params["fc1.b"].grad += db1
        return dx.reshape(shape)

    # -- whole network ----------------------------------------------------
    def forward(self, images: np.ndarray, boxes: np.ndarray):
        """Returns ``(logits (N*R, L), cache)``."""
        fmap, fc = self.features(images)
        pooled, pc = self.pool(fmap, boxes)
        logits, hc = self.head(pooled)
        return logits, (fc, pc, hc)

    def backward(self, dlogits: np.ndarray, cache) -> None:
        """Accumulate parameter gradients; call ``zero_grad`` between steps."""
        fc, pc, hc = cache
        dpooled = self.head_backward(dlogits, hc)
        dfmap = roi_pool_backward(dpooled, pc)
        self.features_backward(dfmap, fc)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def predict_logits(self, images: np.ndarray, boxes: np.ndarray) -> np.ndarray:
        return self.forward(images, boxes)[0]
