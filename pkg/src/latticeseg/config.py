"""Run configuration: model geometry, fusion mode, optimizer schedule, precision."""

import json
from dataclasses import asdict, dataclass, field

from latticeseg.backbone import BackboneConfig
from latticeseg.context import TopicConfig
from latticeseg.errors import ParseError

FUSION_MODES = ("attention", "average", "max")


@dataclass(frozen=True)
class Config:
    class_count: int = 3
    image_channels: int = 1
    backbone_filters: tuple = (8, 16, 32)
    taps: tuple = (1, 2, 3)
    hidden_dims: tuple = None  # default: each level's tap channel count
    fusion: str = "attention"
    attention_filters: int = 64
    topic_sigmas: tuple = (1.0, 2.0)
    topic_orientations: int = 4
    topic_grid: int = 4
    recurrent_init_scale: float = 0.25
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lr_decay: float = 0.9
    lr_constant_epochs: int = 10
    epochs: int = 60
    clip_norm: float = None
    seed: int = 0
    precision: str = "double"
    gradcheck_size: int = 24
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.image_channels not in (1, 3):
            raise ValueError(f"image_channels must be 1 or 3, got {self.image_channels}")

    @property
    def backbone(self):
        return BackboneConfig(tuple(self.backbone_filters), tuple(self.taps))

    @property
    def topic(self):
        return TopicConfig(tuple(self.topic_sigmas), self.topic_orientations, self.topic_grid)

    def level_hidden_dims(self):
        if self.hidden_dims is not None:
            dims = tuple(self.hidden_dims)
            if len(dims) != self.backbone.level_count:
                raise ValueError(
                    f"hidden_dims has {len(dims)} entries for {self.backbone.level_count} levels"
                )
            return dims
        return self.backbone.tap_channels()

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return Config(**_normalize(data))


def _normalize(data):
    for key in ("backbone_filters", "taps", "hidden_dims", "topic_sigmas"):
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    return data


def load_config(path):
    """Read a configuration from a JSON file; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    known = set(Config.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
    return Config(**_normalize(data))


def save_config(config, path):
    data = asdict(config)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
