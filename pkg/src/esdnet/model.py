"""ESDNet: encoder/decoder with dilated residual dense blocks and SAM.

Parameter names are stable and double as the keys of the weights file::

    head.conv.{weight,bias}                    5x5, 12 -> c1
    enc{k}.down.{weight,bias}                  3x3 stride 2, k = 2, 3
    {lvl}.drdb.conv{l}.{weight,bias}           l = 1..3, growth outputs
    {lvl}.drdb.proj.{weight,bias}              1x1 back to level width
    {lvl}.sam{s}.branch{b}.conv{l}.*           b = 0..2, l = 1..5
    {lvl}.sam{s}.branch{b}.proj.*              (``branch`` without index when shared)
    {lvl}.sam{s}.mlp.fc{1,2,3}.*               3C -> 3C/4 -> 3C/4 -> 3C
    dec{k}.conv.*, dec{k}.out.*                k = 3, 2, 1

``lvl`` is one of enc1..enc3, dec3..dec1 and ``s`` counts SAMs per level
starting at 1.
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from . import autodiff as ad
from .errors import ContractError

VARIANTS = ("standard", "large", "weight_shared")
DRDB_DILATIONS = (1, 2, 1)
SAM_DILATIONS = (1, 2, 3, 2, 1)
# pixel shuffle /2, two stride-2 convs, then a /4 pyramid inside the deepest SAM
ALIGN = 32


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "standard"
    width_div: int = 1
    mlp_squeeze: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.width_div not in (1, 2, 4, 8):
            raise ContractError(f"width_div must be 1, 2, 4 or 8, got {self.width_div}")

    @property
    def level_channels(self):
        return tuple(c // self.width_div for c in (48, 96, 192))

    @property
    def decoder_channels(self):
        return 64 // self.width_div

    @property
    def growth(self):
        return 32 // self.width_div

    @property
    def sam_per_level(self):
        return 2 if self.variant == "large" else 1

    @property
    def shared(self):
        return self.variant == "weight_shared"


@dataclass
class ModelParams:
    config: ModelConfig
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.params.items()})


def _conv_spec(prefix, cin, cout, k):
    return [(f"{prefix}.weight", (cout, cin, k, k)), (f"{prefix}.bias", (cout,))]


def _dense_spec(prefix, c, growth, n_layers):
    spec = []
    for l in range(n_layers):
        spec += _conv_spec(f"{prefix}.conv{l + 1}", c + l * growth, growth, 3)
    spec += _conv_spec(f"{prefix}.proj", c + n_layers * growth, c, 1)
    return spec


def _sam_spec(prefix, c, cfg):
    spec = []
    branches = ["branch"] if cfg.shared else [f"branch{b}" for b in range(3)]
    for br in branches:
        spec += _dense_spec(f"{prefix}.{br}", c, cfg.growth, len(SAM_DILATIONS))
    hidden = max(1, 3 * c // cfg.mlp_squeeze)
    spec += [(f"{prefix}.mlp.fc1.weight", (hidden, 3 * c)), (f"{prefix}.mlp.fc1.bias", (hidden,)),
             (f"{prefix}.mlp.fc2.weight", (hidden, hidden)), (f"{prefix}.mlp.fc2.bias", (hidden,)),
             (f"{prefix}.mlp.fc3.weight", (3 * c, hidden)), (f"{prefix}.mlp.fc3.bias", (3 * c,))]
    return spec


def _level_spec(prefix, c, cfg):
    spec = _dense_spec(f"{prefix}.drdb", c, cfg.growth, len(DRDB_DILATIONS))
    for s in range(cfg.sam_per_level):
        spec += _sam_spec(f"{prefix}.sam{s + 1}", c, cfg)
    return spec


def param_spec(cfg):
    """Ordered ``(name, shape)`` list for a configuration."""
    c1, c2, c3 = cfg.level_channels
    cd = cfg.decoder_channels
    spec = _conv_spec("head.conv", 12, c1, 5)
    spec += _level_spec("enc1", c1, cfg)
    spec += _conv_spec("enc2.down", c1, c2, 3) + _level_spec("enc2", c2, cfg)
    spec += _conv_spec("enc3.down", c2, c3, 3) + _level_spec("enc3", c3, cfg)
    for k, cin in ((3, c3), (2, cd + c2), (1, cd + c1)):
        spec += _conv_spec(f"dec{k}.conv", cin, cd, 3)
        spec += _level_spec(f"dec{k}", cd, cfg)
        spec += _conv_spec(f"dec{k}.out", cd, 12, 3)
    return spec


def build_model(config=None, seed=0):
    """Kaiming-uniform fan-in weights (negative slope sqrt(5), i.e. bound
    1/sqrt(fan_in)), zero biases, float32."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_spec(config):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ModelParams(config, params)


def param_count(model):
    seen = set()
    total = 0
    for arr in model.params.values():
        if id(arr) not in seen:
            seen.add(id(arr))
            total += arr.size
    return total


# -- forward -----------------------------------------------------------------

def bind(model, tape=None, dtype=None):
    """Map parameter names to tensors, registering leaves on ``tape`` if given."""
    out = {}
    for name, arr in model.params.items():
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        if tape is None:
            out[name] = ad.Tensor(arr)
        elif name in tape.leaves:
            node, data = tape.leaves[name]
            out[name] = ad.Tensor(data, tape, node)
        else:
            out[name] = tape.leaf(name, arr)
    return out


def _conv(p, prefix, x, stride=1, dilation=1):
    w = p[f"{prefix}.weight"]
    k = w.shape[-1]
    pad = dilation * (k - 1) // 2 if stride == 1 else (k - 1) // 2
    return ad.conv2d(x, w, p[f"{prefix}.bias"], stride=stride, dilation=dilation, padding=pad)


def dense_block(p, prefix, x, dilations):
    """Dense cascade of dilated 3x3 conv + ReLU layers, then a 1x1 projection."""
    feats = [x]
    for l, d in enumerate(dilations):
        inp = ad.concat(feats) if len(feats) > 1 else feats[0]
        feats.append(ad.relu(_conv(p, f"{prefix}.conv{l + 1}", inp, dilation=d)))
    return _conv(p, f"{prefix}.proj", ad.concat(feats))


def drdb_forward(p, f0, prefix="drdb", dilations=DRDB_DILATIONS):
    w = p[f"{prefix}.conv1.weight"]
    if ad.as_tensor(f0).shape[1] != w.shape[1]:
        raise ContractError(f"{prefix}: input has {ad.as_tensor(f0).shape[1]} channels, block expects {w.shape[1]}")
    return ad.add(f0, dense_block(p, prefix, f0, dilations))


def sam_forward(p, fr, prefix="sam", shared=None, return_weights=False):
    """Pyramid context extraction plus cross-scale dynamic fusion.

    With ``return_weights`` the sigmoid fusion weights (N x 3C) are returned
    alongside the output.
    """
    fr = ad.as_tensor(fr)
    n, c, h, w = fr.shape
    if h % 4 or w % 4:
        raise ContractError(f"{prefix}: SAM needs H, W divisible by 4, got {h}x{w}")
    if shared is None:
        shared = f"{prefix}.branch.proj.weight" in p
    pyramid = [fr, ad.resize_bilinear(fr, h // 2, w // 2), ad.resize_bilinear(fr, h // 4, w // 4)]
    ys = []
    for b, inp in enumerate(pyramid):
        br = f"{prefix}.branch" if shared else f"{prefix}.branch{b}"
        y = dense_block(p, br, inp, SAM_DILATIONS)
        if b:
            y = ad.resize_bilinear(y, h, w)
        ys.append(y)
    v = ad.concat([ad.global_avg_pool(y) for y in ys])
    z = ad.relu(ad.affine(v, p[f"{prefix}.mlp.fc1.weight"], p[f"{prefix}.mlp.fc1.bias"]))
    z = ad.relu(ad.affine(z, p[f"{prefix}.mlp.fc2.weight"], p[f"{prefix}.mlp.fc2.bias"]))
    wts = ad.sigmoid(ad.affine(z, p[f"{prefix}.mlp.fc3.weight"], p[f"{prefix}.mlp.fc3.bias"]))
    w_split = ad.split(wts, [c, c, c])
    out = ad.add_n([fr] + [ad.mul_channel(y, wi) for y, wi in zip(ys, w_split)])
    return (out, wts) if return_weights else out


def _level(p, prefix, x, cfg, trace):
    x = drdb_forward(p, x, f"{prefix}.drdb")
    if trace is not None:
        trace.append((f"{prefix}.drdb", x.shape))
    for s in range(cfg.sam_per_level):
        x = sam_forward(p, x, f"{prefix}.sam{s + 1}", shared=cfg.shared)
        if trace is not None:
            trace.append((f"{prefix}.sam{s + 1}", x.shape))
    return x


def check_input(image):
    shape = ad.as_tensor(image).shape
    if len(shape) != 4 or shape[1] != 3:
        raise ContractError(f"expected an N x 3 x H x W image, got {shape}")
    h, w = shape[2:]
    if h % ALIGN or w % ALIGN:
        ph, pw = -h % ALIGN, -w % ALIGN
        raise ContractError(
            f"image {h}x{w} is not a multiple of {ALIGN}; pad by {ph} rows and {pw} columns")


def forward(model, image, tape=None, trace=None, params=None):
    """Run the network; returns ``(I1, I2, I3)`` at full, 1/2 and 1/4 size.

    ``tape`` records the pass for training. ``params`` substitutes an
    already-bound name -> tensor mapping for ``model.params``. ``trace``, if
    a list, collects ``(stage, shape)`` pairs for every block boundary.
    """
    check_input(image)
    cfg = model.config
    p = params if params is not None else bind(model, tape)
    x = ad.as_tensor(image)

    def log(name, t):
        if trace is not None:
            trace.append((name, t.shape))
        return t

    x = log("head.shuffle", ad.pixel_shuffle(x, 2, "down"))
    x = log("head.conv", ad.relu(_conv(p, "head.conv", x)))
    e1 = _level(p, "enc1", x, cfg, trace)
    x = log("enc2.down", _conv(p, "enc2.down", e1, stride=2))
    e2 = _level(p, "enc2", x, cfg, trace)
    x = log("enc3.down", _conv(p, "enc3.down", e2, stride=2))
    e3 = _level(p, "enc3", x, cfg, trace)

    preds = []
    x = e3
    for k, skip in ((3, None), (2, e2), (1, e1)):
        if skip is not None:
            x = log(f"dec{k}.transition", ad.resize_bilinear(x, 2 * x.shape[2], 2 * x.shape[3]))
            x = log(f"dec{k}.cat", ad.concat([x, skip]))
        x = log(f"dec{k}.conv", ad.relu(_conv(p, f"dec{k}.conv", x)))
        x = _level(p, f"dec{k}", x, cfg, trace)
        y = log(f"dec{k}.out", _conv(p, f"dec{k}.out", x))
        preds.append(log(f"dec{k}.pred", ad.pixel_shuffle(y, 2, "up")))
    i3, i2, i1 = preds
    return i1, i2, i3


# -- tiled inference ---------------------------------------------------------

def _starts(total, tile, step):
    if total <= tile:
        return [0]
    starts = list(range(0, total - tile, step))
    return starts + [total - tile]


def _ramp(length, lead, trail, overlap):
    w = np.ones(length)
    ramp = np.arange(1, overlap + 1) / (overlap + 1)
    if lead:
        w[:overlap] = np.minimum(w[:overlap], ramp)
    if trail:
        w[length - overlap:] = np.minimum(w[length - overlap:], ramp[::-1])
    return w


def tiled_infer(model, image, tile=512, overlap=64):
    """Full-resolution restoration on bounded memory.

    The image is reflect-padded to a multiple of 32, split into overlapping
    ``tile`` x ``tile`` windows, and the final predictions are blended with
    linear feather ramps across each overlap band. Returns a 3 x H x W array.
    """
    img = np.asarray(image.data if isinstance(image, ad.Tensor) else image)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ContractError("tiled_infer takes a single image")
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"expected a 3 x H x W image, got {img.shape}")
    if tile % ALIGN:
        raise ContractError(f"tile must be a multiple of {ALIGN}, got {tile}")
    if overlap < 32 or 2 * overlap > tile:
        raise ContractError(f"overlap must lie in [32, tile/2], got {overlap} for tile {tile}")
    h, w = img.shape[1:]
    ph, pw = -h % ALIGN, -w % ALIGN
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") if (ph or pw) else img
    hp, wp = padded.shape[1:]
    th, tw = min(tile, hp), min(tile, wp)
    ys = _starts(hp, th, th - overlap)
    xs = _starts(wp, tw, tw - overlap)
    if len(ys) == 1 and len(xs) == 1:
        out = forward(model, padded[None])[0].data[0]
        return out[:, :h, :w]

    acc = np.zeros((3, hp, wp))
    wsum = np.zeros((hp, wp))
    for y0 in ys:
        wy = _ramp(th, y0 > 0, y0 + th < hp, overlap)
        for x0 in xs:
            wx = _ramp(tw, x0 > 0, x0 + tw < wp, overlap)
            pred = forward(model, padded[None, :, y0:y0 + th, x0:x0 + tw])[0].data[0]
            wt = np.outer(wy, wx)
            acc[:, y0:y0 + th, x0:x0 + tw] += pred * wt
            wsum[y0:y0 + th, x0:x0 + tw] += wt
    return (acc / wsum)[:, :h, :w].astype(img.dtype if img.dtype.kind == "f" else np.float32)
