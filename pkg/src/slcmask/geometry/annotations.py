"""Instance annotations and their line-delimited text exchange format.

One record per line::

    tile <x1> <y1> <x2> <y2>
    inst <tile_id> <class> <x1> <y1> <x2> <y2> <rle...>

Tiles are numbered by order of appearance. Instance boxes are integer pixel
bounds in the owning tile's frame, and the mask is the run-length encoding of
the box-sized crop: row-major, alternating zero/one run lengths starting with
a (possibly empty) zero run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .boxes import Box, mask_to_box

SHIP_CLASS = 1


class AnnotationFormatError(ValueError):
    def __init__(self, message: str, line: int, path: str = "<stream>"):
        super().__init__(f"{path}: line {line}: {message}")
        self.line = line
        self.path = path


@dataclass
class Annotation:
    """A labeled instance: full-frame boolean mask plus its box."""

    box: Box
    mask: np.ndarray = field(repr=False)
    class_id: int = SHIP_CLASS

    @classmethod
    def from_mask(cls, mask: np.ndarray, class_id: int = SHIP_CLASS) -> Optional["Annotation"]:
        mask = np.asarray(mask, dtype=bool)
        box = mask_to_box(mask)
        if box is None:
            return None
        return cls(box, mask, class_id)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def rle_encode(mask: np.ndarray) -> List[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def rle_decode(runs: Sequence[int], shape: Tuple[int, int]) -> np.ndarray:
    total = int(np.prod(shape))
    if sum(runs) != total:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {total} for shape {shape}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(shape)


def _integer_bounds(box: Box) -> Tuple[int, int, int, int]:
    x1, y1 = int(np.floor(box.x1)), int(np.floor(box.y1))
    x2, y2 = int(np.ceil(box.x2)), int(np.ceil(box.y2))
    return x1, y1, x2, y2


def format_instance(tile_id: int, ann: Annotation, origin: Tuple[int, int] = (0, 0)) -> str:
    """Encode ``ann`` relative to a tile whose top-left corner is ``origin``."""
    ox, oy = origin
    x1, y1, x2, y2 = _integer_bounds(ann.box)
    crop = np.zeros((y2 - y1, x2 - x1), dtype=bool)
    h, w = ann.mask.shape
    sy1, sy2, sx1, sx2 = max(y1, 0), min(y2, h), max(x1, 0), min(x2, w)
    crop[sy1 - y1 : sy2 - y1, sx1 - x1 : sx2 - x1] = ann.mask[sy1:sy2, sx1:sx2]
    runs = " ".join(str(r) for r in rle_encode(crop))
    return f"inst {tile_id} {ann.class_id} {x1 - ox} {y1 - oy} {x2 - ox} {y2 - oy} {runs}".rstrip()


def write_annotations(fh: TextIO, tiles: Sequence[Box], instances: Iterable[Tuple[int, Annotation]]) -> None:
    """Write tile records followed by instance records (image-frame annotations)."""
    origins = []
    for t in tiles:
        x1, y1, x2, y2 = _integer_bounds(t)
        origins.append((x1, y1))
        fh.write(f"tile {x1} {y1} {x2} {y2}\n")
    for tile_id, ann in instances:
        fh.write(format_instance(tile_id, ann, origins[tile_id]) + "\n")


def read_annotations(fh: TextIO, path: str = "<stream>") -> Tuple[List[Box], List[Tuple[int, int, Box, np.ndarray]]]:
    """Parse the text format.

    Returns tiles and ``(tile_id, class_id, box_in_tile_frame, crop_mask)``
    records exactly as written.
    """
    tiles: List[Box] = []
    insts = []
    for lineno, raw in enumerate(fh, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "tile":
                if len(parts) != 5:
                    raise ValueError("tile record needs 4 coordinates")
                tiles.append(Box(*(float(v) for v in parts[1:5])))
            elif parts[0] == "inst":
                if len(parts) < 7:
                    raise ValueError("inst record needs tile_id, class and 4 coordinates")
                tile_id, class_id = int(parts[1]), int(parts[2])
                x1, y1, x2, y2 = (int(v) for v in parts[3:7])
                if not 0 <= tile_id < len(tiles):
                    raise ValueError(f"unknown tile id {tile_id}")
                crop = rle_decode([int(v) for v in parts[7:]], (y2 - y1, x2 - x1))
                insts.append((tile_id, class_id, Box(x1, y1, x2, y2), crop))
            else:
                raise ValueError(f"unknown record type {parts[0]!r}")
        except ValueError as exc:
            raise AnnotationFormatError(str(exc), lineno, path) from None
    return tiles, insts


def instances_to_annotations(
    insts, frame_shape: Tuple[int, int], tile_id: int = 0
) -> List[Annotation]:
    """Rebuild full-frame annotations of one tile from parsed records."""
    h, w = frame_shape
    out = []
    for tid, class_id, box, crop in insts:
        if tid != tile_id:
            continue
        mask = np.zeros((h, w), dtype=bool)
        x1, y1, x2, y2 = int(box.x1), int(box.y1), int(box.x2), int(box.y2)
        sy1, sy2, sx1, sx2 = max(y1, 0), min(y2, h), max(x1, 0), min(x2, w)
        mask[sy1:sy2, sx1:sx2] = crop[sy1 - y1 : sy2 - y1, sx1 - x1 : sx2 - x1]
        ann = Annotation.from_mask(mask, class_id)
        if ann is not None:
            out.append(ann)
    return out
