"""Fixed-architecture interest-point CNN with a hand-written backward pass.

The network is a VGG-style shared encoder (eight 3x3 convolutions, channel
plan 64,64,64,64,128,128,128,128, 2x2 max-pool after the 2nd, 4th and 6th)
followed by two heads on the 1/8-resolution features: a detector head
(3x3 -> 256, 1x1 -> 65, the last channel being the "dustbin" = no feature in
this 8x8 cell) and a descriptor head (3x3 -> 256, 1x1 -> 256).  ReLU follows
every convolution except the two head-final 1x1 layers.

Only the gradient with respect to the *input image* is ever needed (the
weights stay fixed during attacks), which keeps the backward pass small:
conv input-gradients, ReLU masks, max-pool argmax routing and the softmax
cross-entropy at the detector output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import spwf
from .geometry import Point2
from .imagecore import GrayImage, ImageBuffer, _bilinear_plane

CELL = 8  # detector cell size; descriptors live on the same 1/8 grid
DUSTBIN = 64


class NetError(Exception):
    pass


class BadDimensions(NetError):
    pass


class MissingTensor(NetError):
    pass


class ShapeMismatch(NetError):
    pass


class UnknownTensor(NetError):
    pass


# name, out_channels, in_channels, kernel
CONV_PLAN: tuple[tuple[str, int, int, int], ...] = (
    ("enc1a", 64, 1, 3),
    ("enc1b", 64, 64, 3),
    ("enc2a", 64, 64, 3),
    ("enc2b", 64, 64, 3),
    ("enc3a", 128, 64, 3),
    ("enc3b", 128, 128, 3),
    ("enc4a", 128, 128, 3),
    ("enc4b", 128, 128, 3),
    ("detA", 256, 128, 3),
    ("detB", 65, 256, 1),
    ("descA", 256, 128, 3),
    ("descB", 256, 256, 1),
)

ENCODER = ("enc1a", "enc1b", "enc2a", "enc2b", "enc3a", "enc3b", "enc4a", "enc4b")
POOL_AFTER = ("enc1b", "enc2b", "enc3b")


def shape_table() -> dict[str, tuple[int, ...]]:
    table: dict[str, tuple[int, ...]] = {}
    for name, out_c, in_c, k in CONV_PLAN:
        table[f"{name}.w"] = (out_c, in_c, k, k)
        table[f"{name}.b"] = (out_c,)
    return table


@dataclass(frozen=True)
class WeightSet:
    """All tensors of the fixed architecture, validated against the shape table."""

    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = shape_table()
        for name in self.tensors:
            if name not in expected:
                raise UnknownTensor(name)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise MissingTensor(name)
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {tuple(got)}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise NetError(f"{name} contains non-finite values")

    def conv(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self.tensors[f"{name}.w"], self.tensors[f"{name}.b"]


def load_weights(raw: bytes) -> WeightSet:
    """Parse an SPWF byte string into a validated WeightSet."""
    tensors = spwf.read_tensor_file(raw)
    return WeightSet({k: v.astype(np.float64) for k, v in tensors.items()})


def save_weights(w: WeightSet) -> bytes:
    return spwf.write_tensor_file(w.tensors)


@dataclass(frozen=True)
class Keypoint:
    position: Point2
    score: float


@dataclass(frozen=True)
class AttackObjective:
    """Which detector class the patch optimisation plays against.

    mode "targeted" uses cross-entropy to target_cell_class (0..63, never the
    dustbin); "untargeted" uses cross-entropy to the dustbin class.  `sign`
    multiplies the loss: +1 keeps the gradient-ascent reading (ascend CE),
    -1 gives the descend-CE convention.
    """

    mode: Literal["targeted", "untargeted"]
    target_cell_class: int = 0
    sign: float = 1.0

    def __post_init__(self):
        if self.mode not in ("targeted", "untargeted"):
            raise NetError(f"unknown objective mode {self.mode!r}")
        if self.mode == "targeted" and not (0 <= self.target_cell_class < DUSTBIN):
            raise NetError("targeted class must be in 0..63 (never the dustbin)")

    @property
    def loss_class(self) -> int:
        return self.target_cell_class if self.mode == "targeted" else DUSTBIN


@dataclass
class NetworkOutput:
    logits: np.ndarray  # (65, Hc, Wc)
    coarse_desc: np.ndarray  # (256, Hc, Wc)
    tape: dict = field(repr=False, default_factory=dict)


# ---------------------------------------------------------------------------
# primitive layers

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, pad: int) -> np.ndarray:
    """Cross-correlation, stride 1, zero padding; x is (C, H, W)."""
    out_c, in_c, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    h, wd = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(in_c * kh * kw, h * wd)
    out = w.reshape(out_c, -1) @ cols
    if b is not None:
        out += b[:, None]
    return out.reshape(out_c, h, wd)


def conv2d_input_grad(dout: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Gradient w.r.t. the conv input: correlate dout with the flipped kernel."""
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return conv2d(dout, w_flip, None, w.shape[2] - 1 - pad)


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pool; returns (pooled, argmax index in 0..3).

    Window elements are ordered row-major, so np.argmax picks the first
    maximum in scan order (the documented tie-break).
    """
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=3)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool2_grad(dout: np.ndarray, idx: np.ndarray, in_shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = in_shape
    dwin = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=3)
    return dwin.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


# ---------------------------------------------------------------------------
# forward / backward

def forward(w: WeightSet, img: GrayImage) -> NetworkOutput:
    """Deterministic forward pass; the tape keeps what backward needs."""
    if img.channels != 1:
        raise BadDimensions("network input must be single-channel")
    h, wd = img.height, img.width
    if h % CELL or wd % CELL or h < 16 or wd < 16:
        raise BadDimensions(f"input {wd}x{h} must be a multiple of 8 and at least 16")

    tape: dict = {"in_shape": (1, h, wd)}
    x = img.plane()[None, :, :].astype(float)
    for name in ENCODER:
        kw, kb = w.conv(name)
        z = conv2d(x, kw, kb, pad=1)
        tape[f"relu_{name}"] = z > 0
        x = np.maximum(z, 0.0)
        if name in POOL_AFTER:
            tape[f"pool_in_{name}"] = x.shape
            x, idx = maxpool2(x)
            tape[f"pool_idx_{name}"] = idx

    det_w, det_b = w.conv("detA")
    za = conv2d(x, det_w, det_b, pad=1)
    tape["relu_detA"] = za > 0
    logits = conv2d(np.maximum(za, 0.0), *w.conv("detB"), pad=0)

    desc_w, desc_b = w.conv("descA")
    zd = conv2d(x, desc_w, desc_b, pad=1)
    coarse = conv2d(np.maximum(zd, 0.0), *w.conv("descB"), pad=0)

    return NetworkOutput(logits=logits, coarse_desc=coarse, tape=tape)


def cell_softmax(logits: np.ndarray) -> np.ndarray:
    """Channel-wise softmax over the 65 classes of every cell."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def detector_loss(out: NetworkOutput, obj: AttackObjective) -> float:
    """Mean cross-entropy of the per-cell classifier against the objective class.

    Targeted mode scores CE to target_cell_class, untargeted mode CE to the
    dustbin; the patch optimiser ascends this value, which for the untargeted
    objective drives probability mass away from "no feature here".
    """
    p = cell_softmax(out.logits)
    ce = -np.log(np.maximum(p[obj.loss_class], 1e-300))
    return float(obj.sign * ce.mean())


def _loss_backward(out: NetworkOutput, w: WeightSet, obj: AttackObjective) -> np.ndarray:
    """Input-pixel gradient of detector_loss, replayed from the forward tape."""
    tape = out.tape
    p = cell_softmax(out.logits)
    n_cells = p.shape[1] * p.shape[2]
    dlogits = p.copy()
    dlogits[obj.loss_class] -= 1.0
    dlogits *= obj.sign / n_cells

    dza = conv2d_input_grad(dlogits, w.tensors["detB.w"], pad=0)
    dza *= tape["relu_detA"]
    dx = conv2d_input_grad(dza, w.tensors["detA.w"], pad=1)

    for name in reversed(ENCODER):
        if name in POOL_AFTER:
            dx = maxpool2_grad(dx, tape[f"pool_idx_{name}"], tape[f"pool_in_{name}"])
        dx *= tape[f"relu_{name}"]
        dx = conv2d_input_grad(dx, w.tensors[f"{name}.w"], pad=1)
    return dx[0]


def loss_and_input_gradient(w: WeightSet, img: GrayImage, obj: AttackObjective) -> tuple[float, np.ndarray]:
    """One forward pass shared between the loss value and its input gradient."""
    out = forward(w, img)
    return detector_loss(out, obj), _loss_backward(out, w, obj)


def input_gradient(w: WeightSet, img: GrayImage, obj: AttackObjective) -> np.ndarray:
    """Exact reverse-mode d(detector_loss)/d(pixel), shaped (height, width)."""
    return loss_and_input_gradient(w, img, obj)[1]


# ---------------------------------------------------------------------------
# decoding

def scatter_heatmap(probs64: np.ndarray) -> np.ndarray:
    """(64, Hc, Wc) cell-class probabilities -> full-resolution heatmap.

    Class k of a cell corresponds to the pixel at row k // 8, column k % 8
    within that cell.
    """
    _, hc, wc = probs64.shape
    return probs64.reshape(CELL, CELL, hc, wc).transpose(2, 0, 3, 1).reshape(hc * CELL, wc * CELL)


def decode_keypoints(
    out: NetworkOutput,
    threshold: float = 0.015,
    nms_radius: int = 4,
    max_points: int = 1000,
) -> list[Keypoint]:
    """Per-cell softmax, dustbin dropped, greedy NMS, score threshold, cap.

    NMS is greedy in descending score (ties broken by row-major position) and
    suppresses anything within Chebyshev distance <= nms_radius of a kept
    point.
    """
    p = cell_softmax(out.logits)
    heat = scatter_heatmap(p[:DUSTBIN])
    ys, xs = np.nonzero(heat >= threshold)
    if len(ys) == 0:
        return []
    scores = heat[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    ys, xs, scores = ys[order], xs[order], scores[order]

    h, w = heat.shape
    suppressed = np.zeros((h, w), dtype=bool)
    kept: list[Keypoint] = []
    r = int(nms_radius)
    for y, x, s in zip(ys, xs, scores):
        if suppressed[y, x]:
            continue
        kept.append(Keypoint(Point2(float(x), float(y)), float(s)))
        if len(kept) >= max_points:
            break
        suppressed[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1] = True
    return kept


def sample_descriptors(out: NetworkOutput, kps: list[Keypoint]) -> np.ndarray:
    """Bilinear samples of the coarse descriptor field at position/8, L2-normalized.

    Returns an (n, 256) array; an all-zero sample stays the zero vector.
    """
    if not kps:
        return np.zeros((0, out.coarse_desc.shape[0]))
    xs = np.array([kp.position.x for kp in kps]) / CELL
    ys = np.array([kp.position.y for kp in kps]) / CELL
    d = out.coarse_desc
    vecs = np.stack([_bilinear_plane(d[c], xs, ys) for c in range(d.shape[0])], axis=1)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return vecs / safe
