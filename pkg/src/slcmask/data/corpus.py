"""On-disk corpora: PNG images, annotation text files, and a manifest.

``manifest.txt`` holds one line per sample::

    <name> <split> <image file> <annotation file>

followed by nothing else; comment lines start with ``#`` and carry the
resolved configuration used to generate the corpus.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from ..geometry.annotations import (
    Annotation,
    AnnotationFormatError,
    instances_to_annotations,
    read_annotations,
    write_annotations,
)
from ..geometry.boxes import Box
from .synth import SceneSpec, synth_scene

MANIFEST = "manifest.txt"


class CorpusError(ValueError):
    """A corpus file is missing or malformed; message names file and position."""


@dataclass
class Sample:
    name: str
    split: str
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    annotations: List[Annotation]


def split_for(index: int, count: int, train_fraction: float) -> str:
    n_train = int(round(count * train_fraction))
    return "train" if index < n_train else "test"


def make_corpus(spec: SceneSpec, count: int, seed: int, train_fraction: float = 0.8) -> List[Sample]:
    """Generate ``count`` scenes; scene i uses the seed stream (seed, i)."""
    out = []
    for i in range(count):
        scene = synth_scene(spec, scene_seed(seed, i))
        out.append(Sample(f"scene{i:05d}", split_for(i, count, train_fraction), scene.image, scene.annotations))
    return out


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def save_image(path: str, image: np.ndarray) -> None:
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False)


def load_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise CorpusError(f"{path}: offset 0: unreadable image ({exc})") from None
    return arr.transpose(2, 0, 1).copy()


def write_sample(out_dir: str, sample: Sample) -> tuple:
    img_name = f"{sample.name}.png"
    ann_name = f"{sample.name}.txt"
    save_image(os.path.join(out_dir, img_name), sample.image)
    _, h, w = sample.image.shape
    with open(os.path.join(out_dir, ann_name), "w") as fh:
        write_annotations(fh, [Box(0, 0, w, h)], [(0, a) for a in sample.annotations])
    return img_name, ann_name


def write_corpus(out_dir: str, samples: Sequence[Sample], header: Sequence[str] = ()) -> str:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"# {h}" for h in header]
    for s in samples:
        img_name, ann_name = write_sample(out_dir, s)
        lines.append(f"{s.name} {s.split} {img_name} {ann_name}")
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return path


def read_corpus(root: str, split: Optional[str] = None) -> List[Sample]:
    path = os.path.join(root, MANIFEST)
    if not os.path.exists(path):
        raise CorpusError(f"{path}: offset 0: manifest not found")
    samples = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4 or parts[1] not in ("train", "test"):
                raise CorpusError(f"{path}: line {lineno}: expected '<name> <train|test> <image> <annotations>'")
            name, sp, img_name, ann_name = parts
            if split is not None and sp != split:
                continue
            image = load_image(os.path.join(root, img_name))
            ann_path = os.path.join(root, ann_name)
            try:
                with open(ann_path) as afh:
                    _, insts = read_annotations(afh, ann_path)
            except OSError as exc:
                raise CorpusError(f"{ann_path}: line 0: {exc}") from None
            except AnnotationFormatError as exc:
                raise CorpusError(str(exc)) from None
            anns = instances_to_annotations(insts, image.shape[1:])
            samples.append(Sample(name, sp, image, anns))
    return samples
