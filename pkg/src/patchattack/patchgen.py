"""Patch generation: chessboard baseline and gradient-ascent variants.

Five variants cover the usual comparison set: plain chessboard, targeted and
untargeted gradient patches from a gray start, the augmented untargeted
patch, and the chessboard-initialised patch (untargeted + augmentation).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .imagecore import (
    GrayImage,
    ImageBuffer,
    encode_ppm,
    random_crop_with_offset,
    resize,
    resize_gradient,
)
from .spnet import AttackObjective, WeightSet, loss_and_input_gradient


class PatchError(Exception):
    pass


class BadCellSize(PatchError):
    pass


class IncompatibleDims(PatchError):
    pass


@dataclass(frozen=True)
class PatchConfig:
    size: int = 128
    cell: int = 8
    steps: int = 1000
    step_size: float = 1e-2
    objective: AttackObjective = field(default_factory=lambda: AttackObjective("untargeted"))
    init: str = "gray"  # gray | random | chessboard
    augment: bool = False
    scale_range: tuple[float, float] = (0.5, 2.0)
    crop: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.size % 8 or self.size < 16:
            raise IncompatibleDims(f"patch size {self.size} must be a multiple of 8, >= 16")
        if self.size % self.cell:
            raise BadCellSize(f"cell {self.cell} does not divide size {self.size}")
        if self.steps < 0 or self.step_size <= 0:
            raise PatchError("steps must be >= 0 and step size positive")
        if self.init not in ("gray", "random", "chessboard"):
            raise PatchError(f"unknown init {self.init!r}")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise PatchError(f"bad scale range {self.scale_range}")


@dataclass
class PatchState:
    pixels: GrayImage
    step: int
    loss_history: list[float]


PRESETS: dict[str, dict] = {
    "chessboard": {"init": "chessboard", "steps": 0},
    "targeted": {"init": "gray", "objective": AttackObjective("targeted", 0)},
    "untargeted": {"init": "gray", "objective": AttackObjective("untargeted")},
    "aug": {"init": "gray", "objective": AttackObjective("untargeted"), "augment": True},
    "chess-init": {"init": "chessboard", "objective": AttackObjective("untargeted"), "augment": True},
}


def preset_config(name: str, **overrides) -> PatchConfig:
    if name not in PRESETS:
        raise PatchError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    merged = {**PRESETS[name], **overrides}
    return PatchConfig(**merged)


def chessboard(size: int, cell: int) -> GrayImage:
    """Alternating 0/1 blocks, top-left block black."""
    if size % cell:
        raise BadCellSize(f"cell {cell} does not divide size {size}")
    idx = np.arange(size) // cell
    board = (idx[:, None] + idx[None, :]) % 2
    return ImageBuffer(board[:, :, None].astype(float))


def _initial_pixels(cfg: PatchConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.init == "gray":
        return np.full((cfg.size, cfg.size), 0.5)
    if cfg.init == "random":
        return rng.uniform(0.0, 1.0, size=(cfg.size, cfg.size))
    return chessboard(cfg.size, cfg.cell).plane().copy()


def _snap8(n: int) -> int:
    return max(16, (n // 8) * 8)


def _augmented_gradient(
    w: WeightSet, pixels: np.ndarray, cfg: PatchConfig, rng: np.random.Generator
) -> tuple[float, np.ndarray]:
    """One sampled scale/crop transform; gradient pulled back through its transpose."""
    scale = float(rng.uniform(*cfg.scale_range))
    new = max(16, int(round(cfg.size * scale)))
    if cfg.crop:
        scaled = resize(ImageBuffer(pixels[:, :, None]), new, new)
        window = min(cfg.size, _snap8(new))
        cropped, (ox, oy) = random_crop_with_offset(scaled, window, window, rng)
        loss, grad_win = loss_and_input_gradient(w, cropped, cfg.objective)
        grad_scaled = np.zeros((new, new))
        grad_scaled[oy : oy + window, ox : ox + window] = grad_win
    else:
        new = _snap8(new)
        scaled = resize(ImageBuffer(pixels[:, :, None]), new, new)
        loss, grad_scaled = loss_and_input_gradient(w, scaled, cfg.objective)
    return loss, resize_gradient(grad_scaled, cfg.size, cfg.size)


def pgd_generate(w: WeightSet, cfg: PatchConfig) -> PatchState:
    """Iterated gradient ascent on the detector loss, clamped to [0, 1].

    Deterministic for a given seed: the same generator drives the random
    initialisation, the per-step scale draw and the crop offsets.
    """
    rng = np.random.default_rng(cfg.seed)
    pixels = _initial_pixels(cfg, rng)
    history: list[float] = []
    for _ in range(cfg.steps):
        if cfg.augment:
            loss, grad = _augmented_gradient(w, pixels, cfg, rng)
        else:
            loss, grad = loss_and_input_gradient(w, ImageBuffer(pixels[:, :, None]), cfg.objective)
        history.append(loss)
        pixels = np.clip(pixels + cfg.step_size * grad, 0.0, 1.0)
    return PatchState(pixels=ImageBuffer(pixels[:, :, None]), step=cfg.steps, loss_history=history)


def patch_metadata(cfg: PatchConfig, state: PatchState, preset: str | None = None) -> str:
    """Sidecar text: the configuration, the seed, the final loss and the
    per-step loss history as CSV rows."""
    buf = io.StringIO()
    if preset:
        buf.write(f"preset = {preset}\n")
    buf.write(f"size = {cfg.size}\n")
    buf.write(f"cell = {cfg.cell}\n")
    buf.write(f"steps = {cfg.steps}\n")
    buf.write(f"step_size = {cfg.step_size!r}\n")
    buf.write(f"objective = {cfg.objective.mode}\n")
    if cfg.objective.mode == "targeted":
        buf.write(f"target_class = {cfg.objective.target_cell_class}\n")
    buf.write(f"objective_sign = {cfg.objective.sign!r}\n")
    buf.write(f"init = {cfg.init}\n")
    buf.write(f"augment = {cfg.augment}\n")
    buf.write(f"scale_range = {cfg.scale_range[0]!r},{cfg.scale_range[1]!r}\n")
    buf.write(f"crop = {cfg.crop}\n")
    buf.write(f"seed = {cfg.seed}\n")
    final = state.loss_history[-1] if state.loss_history else float("nan")
    buf.write(f"final_loss = {final!r}\n")
    buf.write("loss_history:\nstep,loss\n")
    for i, loss in enumerate(state.loss_history):
        buf.write(f"{i},{loss!r}\n")
    return buf.getvalue()


def save_patch(path, state: PatchState, cfg: PatchConfig, preset: str | None = None) -> None:
    """Write the patch as PGM plus the sidecar metadata file."""
    with open(path, "wb") as fh:
        fh.write(encode_ppm(state.pixels))
    with open(f"{path}.meta.txt", "w") as fh:
        fh.write(patch_metadata(cfg, state, preset))


def resized_copy(cfg: PatchConfig, **overrides) -> PatchConfig:
    return replace(cfg, **overrides)
