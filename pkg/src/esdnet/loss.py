"""Deep-supervised demoiréing objective: L1 plus perceptual L1 at three scales."""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .errors import ContractError

VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    perceptual_block: int = 3
    extractor_seed: int = 0
    extractor_weights: Optional[str] = None

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError(f"lambda must be non-negative, got {self.lam}")
        if not 1 <= self.perceptual_block <= 5:
            raise ContractError(f"perceptual_block must be in 1..5, got {self.perceptual_block}")


@dataclass
class FeatureExtractor:
    """VGG16 conv stack cut after the last ReLU of ``block``.

    The weights are never bound to a tape, so they cannot be updated.
    """

    block: int
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __call__(self, x):
        return extract(self, x)


def vgg16_spec(block):
    spec = []
    cin = 3
    for b, widths in enumerate(VGG16_BLOCKS[:block], start=1):
        for i, cout in enumerate(widths, start=1):
            spec.append((f"conv{b}_{i}", cin, cout))
            cin = cout
    return spec


def build_extractor(block=3, seed=0):
    """Frozen, seeded-random extractor with VGG16 topology (He-uniform)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, cin, cout in vgg16_spec(block):
        bound = np.sqrt(6.0 / (cin * 9))
        params[f"{name}.weight"] = rng.uniform(-bound, bound, (cout, cin, 3, 3)).astype(np.float32)
        params[f"{name}.bias"] = np.zeros(cout, dtype=np.float32)
    return FeatureExtractor(block, params)


def extractor_from_weights(params, block=3):
    """Wrap loaded VGG16 weights (names ``conv{b}_{i}.weight``/``.bias``)."""
    out = {}
    for name, cin, cout in vgg16_spec(block):
        for suffix, shape in ((".weight", (cout, cin, 3, 3)), (".bias", (cout,))):
            key = name + suffix
            if key not in params:
                raise ContractError(f"extractor weights missing {key}")
            if tuple(params[key].shape) != shape:
                raise ContractError(f"extractor weight {key} has shape {params[key].shape}, expected {shape}")
            out[key] = np.asarray(params[key], dtype=np.float32)
    return FeatureExtractor(block, out)


def make_extractor(cfg):
    if cfg.extractor_weights:
        from .io import read_weights
        return extractor_from_weights(read_weights(cfg.extractor_weights), cfg.perceptual_block)
    return build_extractor(cfg.perceptual_block, cfg.extractor_seed)


def extract(ext, x):
    x = ad.as_tensor(x)
    for b, widths in enumerate(VGG16_BLOCKS[:ext.block], start=1):
        if b > 1:
            x = ad.maxpool2x2(x)
        for i in range(1, len(widths) + 1):
            name = f"conv{b}_{i}"
            x = ad.relu(ad.conv2d(x, ext.params[f"{name}.weight"], ext.params[f"{name}.bias"], padding=1))
    return x


def downsample_gt(gt):
    """Targets for the three predictions: full, 1/2 and 1/4 bilinear."""
    gt = np.asarray(gt.data if isinstance(gt, ad.Tensor) else gt)
    squeeze = gt.ndim == 3
    g4 = gt[None] if squeeze else gt
    h, w = g4.shape[2:]
    if h % 4 or w % 4:
        raise ContractError(f"ground truth {h}x{w} must be divisible by 4")
    from .kernels import resize_bilinear
    levels = (g4, resize_bilinear(g4, h // 2, w // 2), resize_bilinear(g4, h // 4, w // 4))
    return tuple(l[0] for l in levels) if squeeze else levels


def total_loss(preds, gts, cfg=None, ext=None, return_terms=False):
    """Sum over scales of mean|pred - gt| + lam * mean|phi(pred) - phi(gt)|.

    ``gts`` are treated as constants. With ``return_terms`` a dict of the
    summed L1 and perceptual parts (as floats) is returned as well.
    """
    cfg = cfg or LossConfig()
    if len(preds) != len(gts):
        raise ContractError("preds and gts must have the same number of levels")
    use_perc = cfg.lam > 0
    if use_perc and ext is None:
        ext = make_extractor(cfg)
    l1_terms, perc_terms, parts = [], [], []
    for pred, gt in zip(preds, gts):
        pred = ad.as_tensor(pred)
        gt = np.asarray(gt.data if isinstance(gt, ad.Tensor) else gt, dtype=pred.dtype)
        if pred.shape != gt.shape:
            raise ContractError(f"prediction {pred.shape} and target {gt.shape} differ")
        l1 = ad.l1_diff(pred, gt)
        l1_terms.append(l1)
        parts.append(l1)
        if use_perc:
            fp = extract(ext, pred)
            fg = extract(ext, gt).data
            lp = ad.l1_diff(fp, fg)
            perc_terms.append(lp)
            parts.append(ad.scale(lp, cfg.lam))
    loss = ad.add_n(parts)
    if return_terms:
        terms = {"l1_term": float(sum(t.item() for t in l1_terms)),
                 "perceptual_term": float(sum(t.item() for t in perc_terms))}
        return loss, terms
    return loss
