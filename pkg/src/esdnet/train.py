"""Adam + cyclic cosine annealing training loop and evaluation."""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NaNError
from .loss import LossConfig, downsample_gt, make_extractor, total_loss
from .metrics import psnr, ssim
from .model import ALIGN, forward

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "lr", "loss", "l1_term", "perceptual_term")


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings.

    Defaults train on 64 px patches for 4 epochs. Use
    :meth:`full_scale` for 768 px patches over 150 epochs.
    """

    lr_max: float = 2e-4
    lr_min: float = 1e-6
    cycle_epochs: float = 50
    total_epochs: int = 4
    batch: int = 2
    patch: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.patch % ALIGN:
            raise ContractError(f"patch must be a multiple of {ALIGN}, got {self.patch}")
        if self.batch < 1:
            raise ContractError(f"batch must be at least 1, got {self.batch}")
        if not 0 <= self.lr_min < self.lr_max:
            raise ContractError(f"need 0 <= lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.cycle_epochs <= 0 or self.total_epochs < 1:
            raise ContractError("cycle_epochs must be positive and total_epochs at least 1")

    @classmethod
    def full_scale(cls, **overrides):
        return replace(cls(patch=768, total_epochs=150), **overrides)


@dataclass
class TrainState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    rng: Optional[np.random.Generator] = None
    log: List[dict] = field(default_factory=list)


def cosine_lr(progress, cfg):
    """Learning rate at fractional epoch ``progress``; restarts every cycle."""
    t = math.fmod(progress, cfg.cycle_epochs)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1 + math.cos(math.pi * t / cfg.cycle_epochs))


def adam_step(params, grads, state, lr, cfg=None):
    """One bias-corrected Adam update; ``params`` entries are replaced, not mutated."""
    cfg = cfg or TrainConfig()
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ContractError(f"gradient keys do not match parameters: {missing[:5]}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NaNError(f"non-finite gradient for parameter {name}", node=name)
    b1, b2 = cfg.beta1, cfg.beta2
    t = state.step + 1
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, theta in params.items():
        g = grads[name].astype(theta.dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(theta.dtype)
        params[name] = theta - update
    state.step = t
    return params, state


def random_crop(pair, size, rng):
    """Crop the same ``size`` x ``size`` window from every image in ``pair``."""
    h, w = pair[0].shape[-2:]
    for img in pair:
        if img.shape[-2:] != (h, w):
            raise ContractError("images in a pair must share spatial size")
    if h < size or w < size:
        raise ContractError(f"image {h}x{w} is smaller than crop size {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return tuple(img[..., y:y + size, x:x + size] for img in pair)


def train(model, dataset, cfg=None, loss_cfg=None, extractor=None, state=None, callback=None):
    """Optimise ``model`` in place on (clean, moire[, params]) pairs.

    Returns ``(model, log)`` where ``log`` is a list of per-step dicts with
    the :data:`LOG_FIELDS` keys.
    """
    cfg = cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    if not dataset:
        raise ContractError("training needs a non-empty dataset")
    if extractor is None and loss_cfg.lam > 0:
        extractor = make_extractor(loss_cfg)
    state = state or TrainState()
    if state.rng is None:
        state.rng = np.random.default_rng(cfg.seed)
    rng = state.rng
    n = len(dataset)
    steps_per_epoch = math.ceil(n / cfg.batch)
    for epoch in range(state.epoch, cfg.total_epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch:(b + 1) * cfg.batch]
            crops = [random_crop((dataset[i][0], dataset[i][1]), cfg.patch, rng) for i in idx]
            clean = np.stack([c for c, _ in crops]).astype(np.float32)
            moire = np.stack([m for _, m in crops]).astype(np.float32)
            lr = cosine_lr(epoch + b / steps_per_epoch, cfg)
            tape = ad.Tape()
            try:
                preds = forward(model, moire, tape=tape)
                loss, terms = total_loss(preds, downsample_gt(clean), loss_cfg, extractor, return_terms=True)
                grads = tape.backward(loss)
            except NaNError as exc:
                raise NaNError(f"step {state.step + 1}: {exc}", node=exc.node) from exc
            adam_step(model.params, grads, state, lr, cfg)
            row = {"step": state.step, "epoch": epoch, "lr": lr, "loss": float(loss.data), **terms}
            state.log.append(row)
            if callback is not None:
                callback(row)
            if state.step % 50 == 0:
                logger.info("step %d epoch %d lr %.3g loss %.5f", state.step, epoch, lr, row["loss"])
        state.epoch = epoch + 1
    return model, state.log


def center_crop(img, align=ALIGN):
    h, w = img.shape[-2:]
    ch, cw = h - h % align, w - w % align
    if ch == 0 or cw == 0:
        raise ContractError(f"image {h}x{w} is smaller than {align} pixels")
    y, x = (h - ch) // 2, (w - cw) // 2
    return img[..., y:y + ch, x:x + cw]


def evaluate(model, pairs):
    """PSNR/SSIM of the final prediction against clean targets.

    Both images are centre-cropped to a multiple of 32. Each row also
    carries the metrics of the unrestored input for comparison.
    """
    if not pairs:
        raise ContractError("evaluate needs at least one pair")
    rows = []
    for k, pair in enumerate(pairs):
        clean, moire = center_crop(np.asarray(pair[0])), center_crop(np.asarray(pair[1]))
        pred = forward(model, moire[None].astype(np.float32))[0].data[0]
        pred = np.clip(pred, 0, 1)
        rows.append({"index": k,
                     "psnr": psnr(pred, clean), "ssim": ssim(pred, clean),
                     "input_psnr": psnr(moire, clean), "input_ssim": ssim(moire, clean)})
    return {"psnr": float(np.mean([r["psnr"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows])),
            "input_psnr": float(np.mean([r["input_psnr"] for r in rows])),
            "input_ssim": float(np.mean([r["input_ssim"] for r in rows])),
            "rows": rows}
