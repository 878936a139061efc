"""Checkpoints: ``weights.slct`` (concatenated tensor records) + ``manifest.json``."""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Optional, Tuple

from ..autodiff.serialize import CorruptTensorFile, decode_tensor, encode_tensor
from ..geometry.anchors import AnchorSet
from ..slc import SlcConfig
from .config import PipelineConfig
from .model import MaskRCNN

FORMAT = "slcmask-checkpoint/1"
WEIGHTS = "weights.slct"
MANIFEST = "manifest.json"


class CorruptCheckpoint(ValueError):
    pass


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def _tuplify(value):
    return tuple(_tuplify(v) for v in value) if isinstance(value, list) else value


def config_from_dict(d: dict) -> PipelineConfig:
    d = {k: _tuplify(v) for k, v in d.items()}
    d["anchors"] = AnchorSet(**{k: _tuplify(v) for k, v in d["anchors"].items()})
    d["slc"] = SlcConfig(**{k: _tuplify(v) for k, v in d["slc"].items()})
    return PipelineConfig(**d)


def save_checkpoint(model: MaskRCNN, out_dir: str, run_config: Optional[dict] = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    params = model.named_parameters()
    manifest = {
        "format": FORMAT,
        "seed": model.seed,
        "pipeline": config_to_dict(model.config),
        "parameters": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "run_config": run_config or {},
    }
    with open(os.path.join(out_dir, WEIGHTS), "wb") as fh:
        for t in params.values():
            fh.write(encode_tensor(t))
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=False)
    return out_dir


def load_checkpoint(path: str) -> Tuple[MaskRCNN, dict]:
    mpath = os.path.join(path, MANIFEST)
    wpath = os.path.join(path, WEIGHTS)
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CorruptCheckpoint(f"{mpath}: offset 0: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{mpath}: offset {exc.pos}: {exc.msg}") from None
    if manifest.get("format") != FORMAT:
        raise CorruptCheckpoint(f"{mpath}: offset 0: unknown format {manifest.get('format')!r}")
    model = MaskRCNN(config_from_dict(manifest["pipeline"]), manifest.get("seed", 0))
    try:
        with open(wpath, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CorruptCheckpoint(f"{wpath}: offset 0: {exc.strerror}") from None
    state, pos = {}, 0
    for entry in manifest["parameters"]:
        try:
            arr, nxt = decode_tensor(buf, pos, wpath)
        except CorruptTensorFile as exc:
            raise CorruptCheckpoint(str(exc)) from None
        if list(arr.shape) != entry["shape"]:
            raise CorruptCheckpoint(f"{wpath}: offset {pos}: {entry['name']} has shape {list(arr.shape)}, manifest says {entry['shape']}")
        state[entry["name"]] = arr
        pos = nxt
    if pos != len(buf):
        raise CorruptCheckpoint(f"{wpath}: offset {pos}: {len(buf) - pos} trailing bytes")
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CorruptCheckpoint(f"{mpath}: offset 0: {exc}") from None
    return model, manifest
