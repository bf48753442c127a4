"""Checkpoint-to-SPWF conversion and reference-activation emission."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .refnet import ReferenceNet
from .spwf_format import write_tensor_file


class ExportError(Exception):
    pass


class UnknownTensor(ExportError):
    pass


class ShapeMismatch(ExportError):
    pass


# checkpoint layer name -> SPWF canonical name
NAME_MAP = {
    "conv1a": "enc1a",
    "conv1b": "enc1b",
    "conv2a": "enc2a",
    "conv2b": "enc2b",
    "conv3a": "enc3a",
    "conv3b": "enc3b",
    "conv4a": "enc4a",
    "conv4b": "enc4b",
    "convPa": "detA",
    "convPb": "detB",
    "convDa": "descA",
    "convDb": "descB",
}

PREPROCESSING_NOTE = "grayscale in [0,1], no mean subtraction"

_CHANNELS = {
    "conv1a": (64, 1), "conv1b": (64, 64),
    "conv2a": (64, 64), "conv2b": (64, 64),
    "conv3a": (128, 64), "conv3b": (128, 128),
    "conv4a": (128, 128), "conv4b": (128, 128),
    "convPa": (256, 128), "convPb": (65, 256),
    "convDa": (256, 128), "convDb": (256, 256),
}


def expected_shapes() -> dict[str, tuple[int, ...]]:
    table: dict[str, tuple[int, ...]] = {}
    for layer, (out_c, in_c) in _CHANNELS.items():
        k = 1 if layer.endswith("b") and layer[-2] in "PD" else 3
        table[f"{layer}.weight"] = (out_c, in_c, k, k)
        table[f"{layer}.bias"] = (out_c,)
    return table


@dataclass(frozen=True)
class ExportManifest:
    source_sha256: str
    tensor_map: dict[str, str]  # checkpoint name -> SPWF name
    preprocessing: str


def _load_state_dict(checkpoint_path) -> dict[str, torch.Tensor]:
    state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    if not isinstance(state, dict):
        raise ExportError("checkpoint does not contain a state dict")
    return {k: v for k, v in state.items()}


def _validate(state: dict[str, torch.Tensor]) -> None:
    table = expected_shapes()
    for key in state:
        if key not in table:
            raise UnknownTensor(f"unexpected checkpoint tensor {key!r}")
    for key, shape in table.items():
        if key not in state:
            raise UnknownTensor(f"checkpoint is missing tensor {key!r}")
        got = tuple(state[key].shape)
        if got != shape:
            raise ShapeMismatch(f"{key}: expected {shape}, got {got}")


def export_weights(checkpoint_path, out_path) -> ExportManifest:
    """Convert the released checkpoint into SPWF; a JSON manifest is written
    alongside the output file."""
    checkpoint_path = Path(checkpoint_path)
    out_path = Path(out_path)
    state = _load_state_dict(checkpoint_path)
    _validate(state)

    tensors: dict[str, np.ndarray] = {}
    tensor_map: dict[str, str] = {}
    for key, value in state.items():
        layer, kind = key.rsplit(".", 1)
        canonical = f"{NAME_MAP[layer]}.{'w' if kind == 'weight' else 'b'}"
        tensors[canonical] = value.detach().numpy().astype(np.float32)
        tensor_map[key] = canonical

    out_path.write_bytes(write_tensor_file(tensors))
    manifest = ExportManifest(
        source_sha256=hashlib.sha256(checkpoint_path.read_bytes()).hexdigest(),
        tensor_map=dict(sorted(tensor_map.items())),
        preprocessing=PREPROCESSING_NOTE,
    )
    Path(f"{out_path}.manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    return manifest


def read_pgm(path) -> np.ndarray:
    """Minimal binary PGM (P5, maxval <= 255) reader for the probe image."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise ExportError("probe image must be binary PGM (P5)")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    width, height, maxval = fields
    if maxval > 255:
        raise ExportError("probe image maxval must be <= 255")
    pos += 1
    data = np.frombuffer(raw[pos : pos + width * height], dtype=np.uint8)
    if data.size != width * height:
        raise ExportError("probe image payload truncated")
    return data.reshape(height, width).astype(np.float64) / float(maxval)


def export_reference_activations(checkpoint_path, image_path, out_path) -> None:
    """Run the checkpoint on a fixed 64x64 grayscale image and save the raw
    detector logits and coarse descriptors in the SPWF tensor framing."""
    state = _load_state_dict(checkpoint_path)
    _validate(state)
    image = read_pgm(image_path)
    if image.shape != (64, 64):
        raise ExportError(f"probe image must be 64x64, got {image.shape[1]}x{image.shape[0]}")

    net = ReferenceNet().double()
    net.load_state_dict({k: v.double() for k, v in state.items()})
    net.eval()
    with torch.no_grad():
        logits, coarse = net(torch.from_numpy(image)[None, None, :, :])
    tensors = {
        "logits": logits[0].numpy().astype(np.float32),
        "coarse_desc": coarse[0].numpy().astype(np.float32),
    }
    Path(out_path).write_bytes(write_tensor_file(tensors))


def write_synthetic_checkpoint(path, seed: int = 0) -> None:
    """Random checkpoint with the reference layout (validation stand-in for
    environments without the released weights)."""
    rng = np.random.default_rng(seed)
    state = {}
    for key, shape in expected_shapes().items():
        if key.endswith("weight"):
            fan_in = int(np.prod(shape[1:]))
            arr = rng.normal(0.0, (2.0 / fan_in) ** 0.5, size=shape)
        else:
            arr = rng.normal(0.0, 0.1, size=shape)
        state[key] = torch.from_numpy(arr.astype(np.float32))
    torch.save(state, path)
