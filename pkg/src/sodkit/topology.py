"""Forward-only, small-width realization of the two-branch decoder dataflow.

Random-weight numpy implementation meant for shape/dataflow checks and for
producing maps the loss and metric code can consume. Channel widths scale
with ``base_channels`` (``b``):

==============  ==============  =================
tensor          full width      here
==============  ==============  =================
F_i (backbone)  64 * 2**i       b * 2**i
decoder         256             4 * b
bottleneck      64              b
==============  ==============  =================

Upsampling is bilinear with ``align_corners=False``. Batch norm runs in
inference mode with unit scale, zero shift, zero running mean and unit
running variance. Weights come from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``
drawn in construction order from ``numpy.random.default_rng(seed)``.

Dataflow readings worth knowing:

* the level-2 target-separation feature uses the doubled path
  ``A = relu(theta(F_e3) + conv1(F_e3))`` then
  ``up(theta(A) + conv1(A) + conv1(F_e3)) + theta*(rfb(conv1(F2)))``;
* the refinement stage is ``relu(conv3_w(u) * u + conv3_b(u))`` with
  ``u = conv(F_i)``, one shared ``u`` for all three occurrences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .grid import as_tensor

LEVELS = (2, 3, 4, 5)
BN_EPS = 1e-5


class TopologyError(ValueError):
    """Shape or configuration contract violated."""


@dataclass(frozen=True)
class TopologyConfig:
    input_height: int = 64
    input_width: int = 64
    base_channels: int = 8
    seed: int = 0
    zero_bias: bool = False

    def __post_init__(self):
        if self.input_height % 32 or self.input_width % 32 or self.input_height < 32 or self.input_width < 32:
            raise TopologyError("input dimensions must be positive multiples of 32")
        if self.base_channels < 4 or self.base_channels % 4:
            raise TopologyError("base_channels must be >= 4 and divisible by 4")

    def level_channels(self, level: int) -> int:
        return self.base_channels * 2**level

    @property
    def decoder_channels(self) -> int:
        return 4 * self.base_channels

    @property
    def mid_channels(self) -> int:
        return self.base_channels


# -- primitive ops ------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def batch_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(1.0 + BN_EPS)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, stride: int = 1, dilation: int = 1) -> np.ndarray:
    """Zero-padded 'same' convolution (before striding) via im2col."""
    c_in, h, w = x.shape
    c_out, c_w, k, _ = weight.shape
    if c_w != c_in:
        raise TopologyError(f"conv expects {c_w} input channels, got {c_in}")
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    h_out = (h - 1) // stride + 1
    w_out = (w - 1) // stride + 1
    cols = np.empty((c_in, k, k, h_out, w_out))
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            cols[:, i, j] = xp[:, r0:r0 + stride * (h_out - 1) + 1:stride, c0:c0 + stride * (w_out - 1) + 1:stride]
    out = weight.reshape(c_out, -1) @ cols.reshape(c_in * k * k, -1)
    if bias is not None:
        out += bias[:, None]
    return out.reshape(c_out, h_out, w_out)


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m


def upsample(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a ``(C, H, W)`` block, ``align_corners=False``."""
    h, w = size
    if x.shape[1:] == (h, w):
        return x
    mh = _interp_matrix(h, x.shape[1])
    mw = _interp_matrix(w, x.shape[2])
    return np.einsum("oh,chw,pw->cop", mh, x, mw, optimize=True)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(1, 2), keepdims=True)


# -- layers -------------------------------------------------------------------


class _Init:
    def __init__(self, seed: int, zero_bias: bool):
        self.rng = np.random.default_rng(seed)
        self.zero_bias = zero_bias

    def conv(self, c_in: int, c_out: int, k: int = 1, stride: int = 1, dilation: int = 1, bias: bool = True):
        return Conv(self, c_in, c_out, k, stride, dilation, bias)


class Conv:
    def __init__(self, init: _Init, c_in, c_out, k, stride, dilation, bias):
        bound = 1.0 / np.sqrt(c_in * k * k)
        self.weight = init.rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
        b = init.rng.uniform(-bound, bound, size=c_out) if bias else None
        if b is not None and init.zero_bias:
            b = np.zeros(c_out)
        self.bias = b
        self.stride = stride
        self.dilation = dilation

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.dilation)


class ConvBnRelu:
    """3x3 conv, batch norm, ReLU."""

    def __init__(self, init: _Init, c_in, c_out, k=3, stride=1, dilation=1):
        self.conv = init.conv(c_in, c_out, k, stride, dilation)

    def __call__(self, x):
        return relu(batch_norm(self.conv(x)))


class ASPP:
    """Parallel dilated 3x3 branches (1, 2, 4) plus image pooling, 1x1-mixed."""

    def __init__(self, init: _Init, c_in, c_out):
        self.branches = [init.conv(c_in, c_out, 3, dilation=d) for d in (1, 2, 4)]
        self.pool = init.conv(c_in, c_out, 1)
        self.project = init.conv(4 * c_out, c_out, 1)

    def __call__(self, x):
        feats = [relu(b(x)) for b in self.branches]
        pooled = relu(self.pool(global_avg_pool(x)))
        feats.append(np.broadcast_to(pooled, feats[0].shape))
        return relu(self.project(np.concatenate(feats, axis=0)))


class RFB:
    """Three branches of increasing dilation (1, 3, 5) with a 1x1 shortcut."""

    def __init__(self, init: _Init, c_in, c_out):
        mid = max(c_out // 4, 1)
        self.reduce = [init.conv(c_in, mid, 1) for _ in range(3)]
        self.dilated = [init.conv(mid, mid, 3, dilation=d) for d in (1, 3, 5)]
        self.project = init.conv(3 * mid, c_out, 1)
        self.shortcut = init.conv(c_in, c_out, 1)

    def __call__(self, x):
        feats = [relu(d(relu(r(x)))) for r, d in zip(self.reduce, self.dilated)]
        return relu(self.project(np.concatenate(feats, axis=0)) + self.shortcut(x))


class ChannelAttention:
    """Squeeze-and-excitation with reduction 4."""

    def __init__(self, init: _Init, c):
        self.fc1 = init.conv(c, c // 4, 1)
        self.fc2 = init.conv(c // 4, c, 1)

    def __call__(self, x):
        return x * sigmoid(self.fc2(relu(self.fc1(global_avg_pool(x)))))


class CoordinateAttention:
    """Direction-aware attention from row and column pooled descriptors."""

    def __init__(self, init: _Init, c):
        self.shared = init.conv(c, c // 4, 1)
        self.to_h = init.conv(c // 4, c, 1)
        self.to_w = init.conv(c // 4, c, 1)

    def __call__(self, x):
        _, h, w = x.shape
        pooled_h = x.mean(axis=2, keepdims=True)  # (C, H, 1)
        pooled_w = x.mean(axis=1, keepdims=True)  # (C, 1, W)
        joint = np.concatenate([pooled_h, pooled_w.transpose(0, 2, 1)], axis=1)
        y = relu(batch_norm(self.shared(joint)))
        y_h, y_w = y[:, :h], y[:, h:].transpose(0, 2, 1)
        return x * sigmoid(self.to_h(y_h)) * sigmoid(self.to_w(y_w))


class Theta:
    """1x1 -> 3x3 -> 1x1 bottleneck with ReLUs between."""

    def __init__(self, init: _Init, c, mid):
        self.a = init.conv(c, mid, 1)
        self.b = init.conv(mid, mid, 3)
        self.c = init.conv(mid, c, 1)

    def __call__(self, x):
        return self.c(relu(self.b(relu(self.a(x)))))


class ThetaStar:
    """3x3 -> ReLU -> 1x1."""

    def __init__(self, init: _Init, c, mid):
        self.a = init.conv(c, mid, 3)
        self.b = init.conv(mid, c, 1)

    def __call__(self, x):
        return self.b(relu(self.a(x)))


# -- network ------------------------------------------------------------------


@dataclass
class FeaturePyramid:
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray
    f5: np.ndarray

    def level(self, i: int) -> np.ndarray:
        return getattr(self, f"f{i}")


@dataclass
class ForwardResult:
    """Outputs of :meth:`Topology.forward`.

    ``os_preds`` is ordered by level 2, 3, 4, 5, matching
    :func:`sodkit.hda_loss.total_loss`.
    """

    ts_pred: np.ndarray
    os_preds: list[np.ndarray]
    trace: dict[str, tuple[int, ...]] = field(default_factory=dict)


class Topology:
    def __init__(self, config: TopologyConfig):
        self.config = config
        init = _Init(config.seed, config.zero_bias)
        b = config.base_channels
        d = config.decoder_channels
        m = config.mid_channels
        c = {i: config.level_channels(i) for i in LEVELS}

        # encoder stand-in: stem to stride 2, then one stride-2 conv per level
        self.stem = ConvBnRelu(init, 3, b, stride=2)
        prev = b
        self.enc = {}
        for i in LEVELS:
            self.enc[i] = ConvBnRelu(init, prev, c[i], stride=2)
            prev = c[i]

        # target separation branch
        self.ts_reduce = {i: init.conv(c[i], d, 1) for i in LEVELS}
        self.aspp5 = ASPP(init, d, d)
        self.aspp4 = ASPP(init, d, d)
        self.rfb3 = RFB(init, d, d)
        self.rfb2 = RFB(init, d, d)
        self.theta4 = Theta(init, d, m)
        self.ca4 = ChannelAttention(init, d)
        self.theta3 = Theta(init, d, m)
        self.skip3 = init.conv(d, d, 1)
        self.ca3 = ChannelAttention(init, d)
        self.theta2_inner = Theta(init, d, m)
        self.skip2_inner = init.conv(d, d, 1)
        self.theta2_outer = Theta(init, d, m)
        self.skip2_outer = init.conv(d, d, 1)
        self.skip2_e3 = init.conv(d, d, 1)
        self.theta_star2 = ThetaStar(init, d, m)
        self.ca2 = ChannelAttention(init, d)
        self.ts_head = init.conv(d, 1, 3)

        # global context
        self.gc_reduce = init.conv(c[5], d, 1)
        self.gc_aspp = ASPP(init, d, d)
        self.gc_spatial = init.conv(d, c[5], 1)
        self.gc_ch1 = init.conv(c[5], d // 4, 1)
        self.gc_ch2 = init.conv(d // 4, d, 1)
        self.gc_out = init.conv(c[5], d, 1)

        # aggregation / interaction stages for levels 4, 3, 2
        self.stages = {}
        for i in (4, 3, 2):
            self.stages[i] = {
                "low": [ConvBnRelu(init, c[i], d) for _ in range(3)],
                "gc": ConvBnRelu(init, d, d),
                "high": [ConvBnRelu(init, d, d) for _ in range(2)],
                "fuse": ConvBnRelu(init, 3 * d, d),
                "te": ConvBnRelu(init, d, d),
                "coa": CoordinateAttention(init, d),
                "refine": ConvBnRelu(init, d, d),
                "refine_w": init.conv(d, d, 3),
                "refine_b": init.conv(d, d, 3),
            }
        self.heads = {i: init.conv(d, 1, 3) for i in LEVELS}

    # each stage records its output shapes into ``trace`` when one is given

    def encoder_stub(self, image, trace: dict | None = None) -> FeaturePyramid:
        x = as_tensor(image, "image")
        cfg = self.config
        if x.shape != (3, cfg.input_height, cfg.input_width):
            raise TopologyError(
                f"image shape {x.shape} does not match config (3, {cfg.input_height}, {cfg.input_width})"
            )
        x = self.stem(x)
        feats = {}
        for i in LEVELS:
            x = self.enc[i](x)
            feats[i] = x
            _record(trace, f"F{i}", x)
        return FeaturePyramid(feats[2], feats[3], feats[4], feats[5])

    def ts_branch(self, pyr: FeaturePyramid, trace: dict | None = None):
        """Returns ``(f_e4, f_e3, f_e2, ts_pred)``."""
        r = {i: self.ts_reduce[i](pyr.level(i)) for i in LEVELS}
        s4, s3, s2 = r[4].shape[1:], r[3].shape[1:], r[2].shape[1:]

        f_e4 = self.ca4(relu(upsample(self.theta4(self.aspp5(r[5])), s4) + self.aspp4(r[4])))
        _record(trace, "F_e4", f_e4)

        f_e3 = self.ca3(relu(upsample(self.theta3(f_e4) + self.skip3(f_e4), s3) + self.rfb3(r[3])))
        _record(trace, "F_e3", f_e3)

        inner = relu(self.theta2_inner(f_e3) + self.skip2_inner(f_e3))
        path = self.theta2_outer(inner) + self.skip2_outer(inner) + self.skip2_e3(f_e3)
        f_e2 = self.ca2(relu(upsample(path, s2) + self.theta_star2(self.rfb2(r[2]))))
        _record(trace, "F_e2", f_e2)

        size = (self.config.input_height, self.config.input_width)
        ts_pred = sigmoid(upsample(self.ts_head(f_e2), size))[0]
        _record(trace, "ts_pred", ts_pred)
        return f_e4, f_e3, f_e2, ts_pred

    def global_context(self, f5: np.ndarray, trace: dict | None = None):
        """Returns ``(f_h5, f_gc)``: the pooled multi-scale context and the gated global feature."""
        f_h5 = self.gc_aspp(relu(self.gc_reduce(f5)))
        _record(trace, "F_h5", f_h5)
        w_s = sigmoid(batch_norm(self.gc_spatial(f_h5)))
        f_s5 = w_s * f5 + f5
        _record(trace, "F_s5", f_s5)
        w_c = sigmoid(self.gc_ch2(relu(self.gc_ch1(global_avg_pool(f_s5)))))
        f_gc = w_c * relu(batch_norm(self.gc_out(f_s5)))
        _record(trace, "F_gc", f_gc)
        return f_h5, f_gc

    def aggregate(self, i: int, f_low: np.ndarray, f_high: np.ndarray, f_gc: np.ndarray) -> np.ndarray:
        st = self.stages[i]
        size = f_low.shape[1:]
        low = [conv(f_low) for conv in st["low"]]
        gc = upsample(st["gc"](f_gc), size)
        high = [upsample(conv(f_high), size) for conv in st["high"]]
        return st["fuse"](np.concatenate([low[0] * gc, low[1] * high[0], low[2] * high[1]], axis=0))

    def interact(self, i: int, f_e: np.ndarray, f_fa: np.ndarray) -> np.ndarray:
        st = self.stages[i]
        return st["coa"](st["te"](f_e)) * f_fa + f_fa

    def refine(self, i: int, f_ii: np.ndarray) -> np.ndarray:
        st = self.stages[i]
        u = st["refine"](f_ii)
        return relu(st["refine_w"](u) * u + st["refine_b"](u))

    def predict(self, i: int, f_h: np.ndarray) -> np.ndarray:
        size = (self.config.input_height, self.config.input_width)
        return sigmoid(upsample(self.heads[i](f_h), size))[0]

    def fa_fi_cascade(self, pyr: FeaturePyramid, f_h5: np.ndarray, f_gc: np.ndarray, ts_feats, trace: dict | None = None):
        """Three aggregation/interaction stages; returns predictions for levels 5, 4, 3, 2."""
        f_e = dict(zip((4, 3, 2), ts_feats))
        if len(f_e) != 3:
            raise TopologyError("ts_feats must hold (f_e4, f_e3, f_e2)")
        preds = [self.predict(5, f_h5)]
        _record(trace, "P5", preds[-1])
        f_high = f_h5
        for i in (4, 3, 2):
            f_low = pyr.level(i)
            if f_e[i].shape[1:] != f_low.shape[1:]:
                raise TopologyError(f"level {i}: TS feature {f_e[i].shape} vs backbone {f_low.shape}")
            f_fa = self.aggregate(i, f_low, f_high, f_gc)
            _record(trace, f"F_fa{i}", f_fa)
            f_ii = self.interact(i, f_e[i], f_fa)
            _record(trace, f"F_i{i}", f_ii)
            f_high = self.refine(i, f_ii)
            _record(trace, f"F_h{i}", f_high)
            preds.append(self.predict(i, f_high))
            _record(trace, f"P{i}", preds[-1])
        return preds

    def forward(self, image, trace: bool = False) -> ForwardResult:
        tr = {} if trace else None
        pyr = self.encoder_stub(image, tr)
        f_e4, f_e3, f_e2, ts_pred = self.ts_branch(pyr, tr)
        f_h5, f_gc = self.global_context(pyr.f5, tr)
        preds = self.fa_fi_cascade(pyr, f_h5, f_gc, (f_e4, f_e3, f_e2), tr)
        return ForwardResult(ts_pred=ts_pred, os_preds=preds[::-1], trace=tr or {})


def _record(trace: dict | None, name: str, x: np.ndarray) -> None:
    if trace is not None:
        trace[name] = tuple(x.shape)


def forward(image, config: TopologyConfig) -> ForwardResult:
    return Topology(config).forward(image)


def contract_table(config: TopologyConfig) -> list[dict]:
    """Expected shape of every traced tensor, from the stride/channel laws alone.

    Each row carries the configured shape and the full-width reference shape
    (backbone ``64 * 2**i`` channels, 256-channel decoder).
    """
    h, w = config.input_height, config.input_width
    b = config.base_channels
    rows = []

    def add(name, stride, channels, full_channels):
        shape = (channels, h // stride, w // stride) if channels else (h // stride, w // stride)
        ref = (full_channels, h // stride, w // stride) if full_channels else shape
        rows.append({"name": name, "stride": stride, "shape": shape, "reference_shape": ref})

    for i in LEVELS:
        add(f"F{i}", 2**i, b * 2**i, 64 * 2**i)
    for i in (4, 3, 2):
        add(f"F_e{i}", 2**i, 4 * b, 256)
    add("ts_pred", 1, None, None)
    add("F_h5", 32, 4 * b, 256)
    add("F_s5", 32, b * 32, 2048)
    add("F_gc", 32, 4 * b, 256)
    add("P5", 1, None, None)
    for i in (4, 3, 2):
        add(f"F_fa{i}", 2**i, 4 * b, 256)
        add(f"F_i{i}", 2**i, 4 * b, 256)
        add(f"F_h{i}", 2**i, 4 * b, 256)
        add(f"P{i}", 1, None, None)
    return rows


def audit_shapes(config: TopologyConfig, image=None) -> list[dict]:
    """Run one forward pass and compare every traced shape to the contract table."""
    if image is None:
        image = np.zeros((3, config.input_height, config.input_width))
    result = Topology(config).forward(image, trace=True)
    audit = []
    table = contract_table(config)
    for row in table:
        got = result.trace.get(row["name"])
        audit.append({**row, "observed": got, "ok": got == row["shape"]})
    extra = set(result.trace) - {r["name"] for r in table}
    for name in sorted(extra):
        audit.append({"name": name, "stride": None, "shape": None, "reference_shape": None,
                      "observed": result.trace[name], "ok": False})
    return audit
