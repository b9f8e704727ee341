"""Finite-difference checks for every taped op and the composed blocks.

Each check builds a scalar from random float64 inputs and compares the tape's
gradient with central differences. Primitives must agree to 1e-4, composed
blocks (DRDB, SAM, the width/8 network and the loss) to 1e-3.
"""

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .loss import LossConfig, build_extractor, total_loss
from .model import ModelConfig, build_model, drdb_forward, forward, sam_forward, param_spec

PRIMITIVE_TOL = 1e-4
BLOCK_TOL = 1e-3
# ReLU, |.| and max pooling are kinked; a 1e-4 step can straddle a kink
BLOCK_EPS = 1e-5


@dataclass
class GradResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def ok(self):
        return self.error <= self.tol


def _probe_sum(x, seed):
    """Weighted mean of ``x`` with fixed positive weights, built from taped ops."""
    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=x.shape)
    if x.data.ndim == 4:
        n, c, h, wd = x.shape
        s = ad.sum_all(ad.conv2d(x, w[:1].reshape(1, c, h, wd)))
    else:
        s = ad.sum_all(ad.affine(x, w[:1].reshape(1, -1), np.zeros(1)))
    return ad.scale(s, 1.0 / x.data.size)


def _primitives():
    return {
        "conv2d": (lambda t: ad.conv2d(t[0], t[1], t[2], stride=2, dilation=2, padding=2),
                   [(2, 3, 9, 8), (4, 3, 3, 3), (4,)]),
        "conv2d_1x1": (lambda t: ad.conv2d(t[0], t[1], t[2]), [(1, 5, 4, 4), (3, 5, 1, 1), (3,)]),
        "pixel_shuffle_down": (lambda t: ad.pixel_shuffle(t[0], 2, "down"), [(1, 3, 4, 6)]),
        "pixel_shuffle_up": (lambda t: ad.pixel_shuffle(t[0], 2, "up"), [(1, 8, 3, 2)]),
        "resize_bilinear": (lambda t: ad.resize_bilinear(t[0], 8, 12), [(1, 2, 4, 3)]),
        "global_avg_pool": (lambda t: ad.global_avg_pool(t[0]), [(2, 3, 5, 4)]),
        "affine": (lambda t: ad.affine(t[0], t[1], t[2]), [(3, 5), (4, 5), (4,)]),
        "relu": (lambda t: ad.relu(t[0]), [(2, 3, 3, 3)]),
        "sigmoid": (lambda t: ad.sigmoid(t[0]), [(2, 3, 2, 2)]),
        "add": (lambda t: ad.add(t[0], t[1]), [(1, 2, 3, 3), (1, 2, 3, 3)]),
        "mul_channel": (lambda t: ad.mul_channel(t[0], t[1]), [(2, 3, 2, 2), (2, 3)]),
        "l1_diff": (lambda t: ad.l1_diff(t[0], t[1]), [(1, 2, 3, 3), (1, 2, 3, 3)]),
        "concat": (lambda t: ad.concat([t[0], t[1]]), [(1, 2, 3, 3), (1, 1, 3, 3)]),
        "split": (lambda t: ad.split(t[0], [2, 1])[0], [(1, 3, 2, 2)]),
        "maxpool2x2": (lambda t: ad.maxpool2x2(t[0]), [(1, 2, 5, 4)]),
    }


def _check_primitive(name, fn, shapes):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    inputs = [rng.standard_normal(s) for s in shapes]

    def build(t):
        out = fn(t)
        return out if out.data.ndim == 0 else _probe_sum(out, 1)

    return ad.grad_check(build, inputs)


def _block_params(model, prefix, rename):
    return {k.replace(prefix, rename, 1): v.astype(np.float64)
            for k, v in model.items() if k.startswith(prefix)}


def _check_drdb():
    model = build_model(ModelConfig(width_div=8), seed=11)
    p = _block_params(model, "enc1.drdb", "drdb")
    x = np.random.default_rng(1).standard_normal((1, 6, 8, 8))
    names = ["drdb.conv1.weight", "drdb.conv3.weight", "drdb.proj.weight", "drdb.conv2.bias"]

    def build(t):
        q = dict(p)
        q.update(zip(names, t[1:]))
        return _probe_sum(drdb_forward(q, t[0]), 2)

    return ad.grad_check(build, [x] + [p[n] for n in names], eps=BLOCK_EPS, samples=30, seed=1)


def _check_sam():
    model = build_model(ModelConfig(width_div=8), seed=12)
    p = _block_params(model, "enc1.sam1", "sam")
    x = np.random.default_rng(2).standard_normal((1, 6, 8, 8))
    names = ["sam.branch0.conv1.weight", "sam.branch1.conv4.weight", "sam.branch2.proj.weight",
             "sam.mlp.fc1.weight", "sam.mlp.fc3.weight", "sam.mlp.fc2.bias"]

    def build(t):
        q = dict(p)
        q.update(zip(names, t[1:]))
        return _probe_sum(sam_forward(q, t[0]), 3)

    return ad.grad_check(build, [x] + [p[n] for n in names], eps=BLOCK_EPS, samples=30, seed=2)


def _check_network():
    model = build_model(ModelConfig(width_div=8), seed=13)
    x = np.random.default_rng(3).random((1, 3, 32, 32))
    base = {k: v.astype(np.float64) for k, v in model.items()}
    names = [n for n, _ in param_spec(model.config) if n.endswith(".weight")][::7]

    def build(t):
        q = {k: ad.Tensor(v) for k, v in base.items()}
        q.update(zip(names, t))
        i1, i2, i3 = forward(model, x, params=q)
        return ad.add_n([_probe_sum(i1, 4), _probe_sum(i2, 5), _probe_sum(i3, 6)])

    return ad.grad_check(build, [base[n] for n in names], eps=BLOCK_EPS, samples=4, seed=3)


def _check_loss():
    rng = np.random.default_rng(4)
    preds = [rng.random((1, 3, 16 // s, 16 // s)) for s in (1, 2, 4)]
    gts = [rng.random(p.shape) for p in preds]
    cfg = LossConfig(lam=1.0, perceptual_block=2)
    ext = build_extractor(2, seed=1)
    return ad.grad_check(lambda t: total_loss(t, gts, cfg, ext), preds, eps=BLOCK_EPS, samples=30, seed=4)


def run(include_blocks=True):
    """Run the suite and return a list of :class:`GradResult`."""
    results = []
    for name, (fn, shapes) in _primitives().items():
        t0 = time.perf_counter()
        err = _check_primitive(name, fn, shapes)
        results.append(GradResult(name, float(err), PRIMITIVE_TOL, time.perf_counter() - t0))
    if include_blocks:
        for name, check in (("drdb", _check_drdb), ("sam", _check_sam),
                            ("network_div8", _check_network), ("total_loss", _check_loss)):
            t0 = time.perf_counter()
            err = check()
            results.append(GradResult(name, float(err), BLOCK_TOL, time.perf_counter() - t0))
    return results
