"""Flat ``key = value`` run configuration.

The packaged ``defaults.cfg`` lists every accepted key. Its literals also fix
each key's type: ``true``/``false`` are booleans, comma-separated values are
tuples, and everything else is an int, a float, or a bare string. Overrides are
layered defaults < preset < file < command line, and unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .data.augment import AugmentPolicy
from .data.synth import SceneSpec
from .geometry.anchors import AnchorSet
from .geometry.tiling import TileSpec
from .pipeline.config import PipelineConfig
from .slc import SlcConfig

DEFAULTS_FILE = "defaults.cfg"
PRESET_DIR = "presets"

PIPELINE_KEYS = (
    "backbone_channels",
    "backbone_strides",
    "pyramid_stages",
    "fpn_channels",
    "rpn_pre_nms",
    "rpn_nms",
    "train_rois",
    "infer_rois",
    "rpn_anchors_per_image",
    "rpn_positive_iou",
    "rpn_negative_iou",
    "rois_per_image",
    "positive_ratio",
    "roi_positive_iou",
    "max_instances",
    "detection_nms",
    "detection_min_score",
    "box_roi_size",
    "roi_align_size",
    "mask_size",
    "mask_head_convs",
    "mask_channels",
    "box_hidden",
    "mask_threshold",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "batch_size",
    "clip_grad",
)
SCENE_KEYS = ("image_extent", "ship_count", "length", "width", "dock_probability", "orientation", "noise")
AUGMENT_KEYS = ("brightness", "contrast", "color", "sharpness", "rotation", "rotation_step")


class ConfigError(ValueError):
    """Bad key, bad value, or unreadable config file."""


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_literal(text: str):
    """Untyped parse used for the reference file."""
    text = text.strip()
    if "," in text:
        return tuple(_scalar(p.strip()) for p in text.strip("()[]").split(",") if p.strip())
    return _scalar(text)


def _coerce_scalar(key: str, text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected true or false, got {text!r}")
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def coerce(key: str, text: str, like):
    """Parse ``text`` into the type of the default value ``like``."""
    if isinstance(like, tuple):
        parts = [p for p in text.strip().strip("()[]").split(",") if p.strip()]
        proto = float if any(isinstance(v, float) for v in like) else int
        return tuple(_coerce_scalar(key, p, proto(0)) for p in parts)
    return _coerce_scalar(key, text, like)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def read_pairs(lines: Iterable[str], source: str) -> List[Tuple[str, str, int]]:
    """``(key, raw value, line number)`` for every assignment in ``lines``."""
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        out.append((key, value, lineno))
    return out


def _packaged_text(*parts: str) -> str:
    return resources.files(__package__).joinpath(*parts).read_text()


def load_defaults() -> Dict[str, object]:
    text = _packaged_text(DEFAULTS_FILE)
    return {k: parse_literal(v) for k, v, _ in read_pairs(text.splitlines(), DEFAULTS_FILE)}


def preset_names() -> List[str]:
    folder = resources.files(__package__).joinpath(PRESET_DIR)
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".cfg"))


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration; every key of the reference file is present."""

    values: Tuple[Tuple[str, object], ...]

    def __getitem__(self, key: str):
        for k, v in self.values:
            if k == key:
                return v
        raise KeyError(key)

    def as_dict(self) -> Dict[str, object]:
        return dict(self.values)

    def section(self, prefix: str) -> Dict[str, object]:
        p = prefix + "."
        return {k[len(p) :]: v for k, v in self.values if k.startswith(p)}

    def dump(self) -> str:
        return "\n".join(f"{k} = {format_value(v)}" for k, v in self.values) + "\n"

    def with_overrides(self, overrides: Mapping[str, str], source: str = "override") -> "RunConfig":
        current = self.as_dict()
        for key, text in overrides.items():
            if key not in current:
                raise ConfigError(f"{source}: unknown key {key!r}")
            current[key] = coerce(key, str(text), current[key])
        return RunConfig(tuple(current.items()))

    # ------------------------------------------------------------ builders
    @property
    def seed(self) -> int:
        return self["seed"]

    def slc(self) -> SlcConfig:
        s = self.section("slc")
        return SlcConfig(
            r1=s["r1"],
            r2=s["r2"],
            channels=self["pipeline.mask_channels"],
            fused_layers=_as_tuple(s["fused_layers"]),
            attach_to_cls_reg=s["attach_cls_reg"],
            enabled=s["enabled"],
        )

    def anchors(self) -> AnchorSet:
        a = self.section("anchors")
        return AnchorSet(
            strides=_as_tuple(a["strides"]),
            base_scales=tuple(float(v) for v in _as_tuple(a["base_scales"])),
            scale_multipliers=tuple(float(v) for v in _as_tuple(a["scale_multipliers"])),
            aspect_ratios=tuple(float(v) for v in _as_tuple(a["aspect_ratios"])),
        )

    def pipeline(self) -> PipelineConfig:
        p = self.section("pipeline")
        kw = {k: (_as_tuple(p[k]) if k in _TUPLE_FIELDS else p[k]) for k in PIPELINE_KEYS}
        return PipelineConfig(anchors=self.anchors(), slc=self.slc(), **kw)

    def tiles(self) -> TileSpec:
        return TileSpec(tile_size=self["tiles.size"], dedup_iou=self["tiles.dedup_iou"])

    def augment_policy(self) -> Optional[AugmentPolicy]:
        a = self.section("augment")
        if not a["enabled"]:
            return None
        kw = {k: a[k] for k in AUGMENT_KEYS}
        return AugmentPolicy(seed=self.seed, **kw)

    def scene(self) -> SceneSpec:
        s = self.section("synth")
        kw = {k: s[k] for k in SCENE_KEYS}
        return SceneSpec(**kw)


_TUPLE_FIELDS = {"backbone_channels", "backbone_strides", "pyramid_stages", "positive_ratio"}


def _as_tuple(v) -> tuple:
    return v if isinstance(v, tuple) else (v,)


def _file_overrides(path: str) -> Dict[str, str]:
    try:
        with open(path) as fh:
            pairs = read_pairs(fh, path)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return _unique(pairs, path)


def _unique(pairs, source: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for key, value, lineno in pairs:
        if key in out:
            raise ConfigError(f"{source}: line {lineno}: {key} set twice")
        out[key] = value
    return out


def resolve(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, str]] = None,
    preset: Optional[str] = None,
) -> RunConfig:
    """Defaults, then ``preset``, then the file at ``path``, then ``overrides``."""
    cfg = RunConfig(tuple(load_defaults().items()))
    if preset:
        if preset not in preset_names():
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(preset_names())}")
        text = _packaged_text(PRESET_DIR, f"{preset}.cfg")
        src = f"preset {preset}"
        cfg = cfg.with_overrides(_unique(read_pairs(text.splitlines(), src), src), src)
    if path:
        cfg = cfg.with_overrides(_file_overrides(path), path)
    if overrides:
        cfg = cfg.with_overrides(overrides, "command line")
    try:  # validate cross-field constraints early
        cfg.pipeline()
        cfg.scene()
        cfg.tiles()
        cfg.augment_policy()
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


def parse_cli_overrides(args: Iterable[str]) -> Tuple[Dict[str, str], List[str]]:
    """Split ``--key=value`` tokens (keys containing a dot or ``seed``) from the rest."""
    overrides: Dict[str, str] = {}
    rest: List[str] = []
    for a in args:
        if a.startswith("--") and "=" in a:
            key, value = a[2:].split("=", 1)
            if "." in key or key == "seed":
                overrides[key] = value
                continue
        rest.append(a)
    return overrides, rest


def config_header(cfg: RunConfig) -> List[str]:
    """The resolved config as comment-ready lines for embedding in outputs."""
    return ["resolved config:"] + [f"  {line}" for line in cfg.dump().splitlines()]


def defaults_path() -> str:
    return os.fspath(resources.files(__package__).joinpath(DEFAULTS_FILE))
