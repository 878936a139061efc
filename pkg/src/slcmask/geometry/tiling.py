"""Object-centred slicing of large images with overlap deduplication."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .boxes import Box, boxes_to_array
from .nms import nms_indices

DEFAULT_TILE_SIZE = 1024
DEFAULT_DEDUP_IOU = 0.1


@dataclass(frozen=True)
class TileSpec:
    tile_size: int = DEFAULT_TILE_SIZE
    dedup_iou: float = DEFAULT_DEDUP_IOU


def candidate_tile(center: Tuple[float, float], image_extent: Tuple[int, int], tile_size: int) -> Box:
    """Tile centred on ``center``, translated (never shrunk) to lie inside the image.

    If the image is smaller than the tile along an axis, the tile is clamped
    to the image extent on that axis.
    """
    width, height = image_extent
    bounds = []
    for c, extent in ((center[0], width), (center[1], height)):
        size = min(tile_size, extent)
        lo = int(np.floor(c - size / 2))
        lo = min(max(lo, 0), extent - size)
        bounds.append((lo, lo + size))
    (x1, x2), (y1, y2) = bounds
    return Box(x1, y1, x2, y2)


def tile_image(image_extent: Tuple[int, int], centers: Sequence[Tuple[float, float]], spec: TileSpec = TileSpec()) -> List[Box]:
    """One tile per object centre, deduplicated by NMS.

    Each tile is scored by how many centres it contains (half-open bounds);
    ties go to the lower centre index. Returned boxes carry that count as
    ``score`` and appear in NMS selection order.
    """
    width, height = image_extent
    for i, (cx, cy) in enumerate(centers):
        if not (0 <= cx <= width and 0 <= cy <= height):
            raise ValueError(f"center {i} at ({cx}, {cy}) lies outside the {width}x{height} image")
    if len(centers) == 0:
        return []
    tiles = [candidate_tile(c, image_extent, spec.tile_size) for c in centers]
    arr = boxes_to_array(tiles)
    pts = np.asarray(centers, dtype=np.float64)
    inside = (
        (pts[None, :, 0] >= arr[:, None, 0])
        & (pts[None, :, 0] < arr[:, None, 2])
        & (pts[None, :, 1] >= arr[:, None, 1])
        & (pts[None, :, 1] < arr[:, None, 3])
    )
    counts = inside.sum(axis=1).astype(np.float64)
    keep = nms_indices(arr, counts, spec.dedup_iou)
    return [tiles[i].with_score(float(counts[i])) for i in keep]
