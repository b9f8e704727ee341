"""Synthetic clean/moiré pairs from the degradation M = F(R * S).

S is a per-channel sinusoidal beat field whose channels share a spatial
frequency but not a phase, so the three colour channels are scaled out of
step within each cycle. F is a global ISP-like curve: gamma, white-balance
gains, then a cubic tone curve. All numeric ranges below are our own
choices; nothing upstream pins them down.
"""

from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from .errors import ContractError

KINDS = ("gradient", "checker", "textlike", "mixed")

# sampling ranges used by gen_dataset
AMPLITUDE_RANGE = (0.1, 0.6)
FREQ_RANGE = (0.02, 0.45)          # |f| in cycles per pixel
GAMMA_RANGE = (0.8, 1.4)
GAIN_RANGE = (0.85, 1.15)
TONE_RANGE = (0.0, 0.5)


@dataclass(frozen=True)
class MoireParams:
    amplitudes: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    freq: Tuple[float, float] = (0.1, 0.0)
    phases: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    gamma: float = 1.0
    gains: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    tone_strength: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if any(not 0 <= a < 1 for a in self.amplitudes):
            raise ContractError(f"amplitudes must lie in [0, 1), got {self.amplitudes}")
        if self.gamma <= 0:
            raise ContractError(f"gamma must be positive, got {self.gamma}")
        if not 0 <= self.tone_strength <= 1:
            raise ContractError(f"tone_strength must lie in [0, 1], got {self.tone_strength}")

    def to_dict(self):
        return asdict(self)


def gen_scaling_field(p, h, w):
    """S_c(i, j) = 1 + a_c cos(2 pi (fx j + fy i) + phi_c), shape 3 x h x w."""
    if h < 1 or w < 1:
        raise ContractError(f"field size must be positive, got {h}x{w}")
    if any(a >= 1 for a in p.amplitudes):
        raise ContractError("amplitudes >= 1 would make the scale field non-positive")
    fx, fy = p.freq
    i = np.arange(h)[:, None]
    j = np.arange(w)[None, :]
    arg = 2 * np.pi * (fx * j + fy * i)
    return np.stack([1.0 + a * np.cos(arg + phi) for a, phi in zip(p.amplitudes, p.phases)])


def tone_curve(x, strength):
    if strength == 0:
        return x
    return x + strength * x * (1 - x) * (0.5 - x) * 4


def apply_degradation(clean, p):
    """Return the moiré image clamp(tone(gains * (clean * S) ** gamma), 0, 1)."""
    clean = np.asarray(clean)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ContractError(f"expected a 3 x H x W image, got {clean.shape}")
    dtype = clean.dtype if clean.dtype.kind == "f" else np.dtype(np.float32)
    x = clean.astype(dtype, copy=False)
    if any(a != 0 for a in p.amplitudes):
        x = x * gen_scaling_field(p, *clean.shape[1:]).astype(dtype)
    if p.gamma != 1:
        x = np.power(x, x.dtype.type(p.gamma))
    if any(g != 1 for g in p.gains):
        x = x * np.asarray(p.gains, dtype=dtype)[:, None, None]
    x = tone_curve(x, p.tone_strength)
    return np.clip(x, 0, 1).astype(dtype, copy=False)


def _gradient(h, w, rng):
    u = np.arange(h)[:, None] / max(h - 1, 1)
    v = np.arange(w)[None, :] / max(w - 1, 1)
    mix = rng.uniform(0.2, 0.8, size=3)
    return np.stack([m * u + (1 - m) * v for m in mix])


def _checker(h, w, rng):
    cell = int(rng.integers(2, 9))
    lo, hi = sorted(rng.uniform(0.05, 0.95, size=2))
    if hi - lo < 0.2:
        lo, hi = 0.1, 0.9
    i = np.arange(h)[:, None] // cell
    j = np.arange(w)[None, :] // cell
    board = np.where((i + j) % 2 == 0, lo, hi)
    return np.broadcast_to(board, (3, h, w)).copy()


def _glyphs(img, rng, ink, density=1.0):
    h, w = img.shape[1:]
    line_h = int(rng.integers(6, 11))
    for top in range(2, h - line_h, line_h + int(rng.integers(2, 5))):
        x = int(rng.integers(1, 4))
        while x < w - 2:
            gw = int(rng.integers(2, 6))
            if rng.random() < 0.85 * density:
                gh = int(rng.integers(line_h // 2, line_h + 1))
                img[:, top + line_h - gh:top + line_h, x:min(x + gw, w)] = ink[:, None, None]
            x += gw + int(rng.integers(1, 4))
    return img


def _textlike(h, w, rng):
    img = np.ones((3, h, w))
    return _glyphs(img, rng, ink=rng.uniform(0.0, 0.15, size=3))


def _mixed(h, w, rng):
    img = 0.3 + 0.6 * _gradient(h, w, rng)
    for _ in range(int(rng.integers(2, 5))):
        y0, x0 = int(rng.integers(0, h)), int(rng.integers(0, w))
        hh, ww = int(rng.integers(h // 8 + 1, h // 2 + 2)), int(rng.integers(w // 8 + 1, w // 2 + 2))
        img[:, y0:y0 + hh, x0:x0 + ww] = rng.uniform(0.05, 0.95, size=3)[:, None, None]
    return _glyphs(img, rng, ink=rng.uniform(0.0, 0.2, size=3), density=0.4)


_GENERATORS = {"gradient": _gradient, "checker": _checker, "textlike": _textlike, "mixed": _mixed}


def gen_clean(kind, h, w, seed=0):
    """Procedural clean image in [0, 1], float32, 3 x h x w."""
    if kind not in _GENERATORS:
        raise ContractError(f"unknown clean image kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(seed)
    return np.clip(_GENERATORS[kind](h, w, rng), 0, 1).astype(np.float32)


def sample_params(rng, seed=0):
    mag = rng.uniform(*FREQ_RANGE)
    theta = rng.uniform(0, np.pi)
    return MoireParams(
        amplitudes=tuple(float(a) for a in rng.uniform(*AMPLITUDE_RANGE, size=3)),
        freq=(float(mag * np.cos(theta)), float(mag * np.sin(theta))),
        phases=tuple(float(p) for p in rng.uniform(0, 2 * np.pi, size=3)),
        gamma=float(rng.uniform(*GAMMA_RANGE)),
        gains=tuple(float(g) for g in rng.uniform(*GAIN_RANGE, size=3)),
        tone_strength=float(rng.uniform(*TONE_RANGE)),
        seed=int(seed),
    )


def gen_dataset(n, h, w, seed=0, kinds=KINDS):
    """``n`` (clean, moiré, params) triples; each pair gets a fresh sub-seed."""
    if n < 1:
        raise ContractError(f"dataset size must be at least 1, got {n}")
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        kind = kinds[int(rng.integers(len(kinds)))]
        sub = int(rng.integers(0, 2 ** 31 - 1))
        clean = gen_clean(kind, h, w, seed=sub)
        params = sample_params(rng, seed=sub)
        out.append((clean, apply_degradation(clean, params), params))
    return out
