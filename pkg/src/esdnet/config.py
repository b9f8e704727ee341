"""Flat ``key=value`` run configuration.

Keys are ``<section>.<field>`` where the section is one of ``model``,
``train``, ``loss`` or ``moire`` and the field is any field of the matching
dataclass. Tuples are comma separated. Blank lines and ``#`` comments are
ignored. Example::

    model.width_div = 4
    train.total_epochs = 4
    loss.lam = 1.0
    moire.amplitudes = 0.3, 0.2, 0.4
"""

import typing
from dataclasses import dataclass, field, fields, replace

from .errors import ContractError
from .loss import LossConfig
from .model import ModelConfig
from .synth import MoireParams
from .train import TrainConfig

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "loss": LossConfig, "moire": MoireParams}


class ConfigError(ContractError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    moire: typing.Optional[MoireParams] = None

    def to_lines(self):
        lines = []
        for section in SECTIONS:
            obj = getattr(self, section)
            if obj is None:
                continue
            for f in fields(obj):
                val = getattr(obj, f.name)
                if val is None:
                    continue
                if isinstance(val, tuple):
                    val = ", ".join(repr(v) for v in val)
                lines.append(f"{section}.{f.name} = {val}")
        return lines


def _coerce(tp, raw, key):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if origin is typing.Union:
            if raw.lower() in ("", "none"):
                return None
            return _coerce(next(a for a in args if a is not type(None)), raw, key)
        if origin is tuple:
            return tuple(_coerce(args[0], part.strip(), key) for part in raw.split(","))
        if tp is bool:
            return raw.lower() in ("1", "true", "yes")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {raw!r} for key {key}") from None


def parse_pairs(pairs, base=None):
    """Apply ``[(key, raw_value), ...]`` on top of ``base`` (or defaults)."""
    base = base or RunConfig()
    updates = {s: {} for s in SECTIONS}
    for key, raw in pairs:
        section, _, name = key.partition(".")
        cls = SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config key {key!r}")
        hints = typing.get_type_hints(cls)
        if name not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        updates[section][name] = _coerce(hints[name], raw, key)
    out = {}
    for section, cls in SECTIONS.items():
        current = getattr(base, section)
        if not updates[section]:
            out[section] = current
            continue
        try:
            out[section] = replace(current, **updates[section]) if current is not None else cls(**updates[section])
        except (TypeError, ContractError) as exc:
            raise ConfigError(f"invalid {section} settings: {exc}") from None
    return RunConfig(**out)


def split_line(line, where="override"):
    if "=" not in line:
        raise ConfigError(f"{where}: expected key=value, got {line!r}")
    key, _, value = line.partition("=")
    return key.strip(), value.strip()


def parse_text(text, base=None):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(split_line(line, f"line {lineno}"))
    return parse_pairs(pairs, base)


def load_config(path, overrides=(), base=None):
    """Read a config file, then apply ``key=value`` override strings."""
    cfg = base or RunConfig()
    if path:
        with open(path) as fh:
            cfg = parse_text(fh.read(), cfg)
    if overrides:
        cfg = parse_pairs([split_line(o) for o in overrides], cfg)
    return cfg
