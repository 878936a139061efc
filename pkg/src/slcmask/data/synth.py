"""Synthetic harbour scenes with densely docked ships.

Ships are oriented rectangles rasterised by pixel centre. A docked ship is
placed parallel to an existing one with a 0-1 px gap, which produces the
adjacent-instance layout that merges masks in a plain mask head.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..geometry.annotations import Annotation

logger = logging.getLogger(__name__)

PALETTE = tuple(0.45 + 0.1 * i for i in range(6))
BACKGROUND_LEVEL = 0.15
MAX_RETRIES = 60


@dataclass(frozen=True)
class SceneSpec:
    image_extent: Tuple[int, int] = (64, 64)
    ship_count: Tuple[int, int] = (4, 8)
    length: Tuple[float, float] = (12.0, 22.0)
    width: Tuple[float, float] = (5.0, 8.0)
    dock_probability: float = 0.7
    orientation: Tuple[float, float] = (0.0, 180.0)
    noise: float = 0.03

    def __post_init__(self):
        if not 0.0 <= self.dock_probability <= 1.0:
            raise ValueError(f"dock_probability must be in [0, 1], got {self.dock_probability}")
        lo, hi = self.ship_count
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid ship_count range {self.ship_count}")
        if self.width[0] <= 0 or self.length[0] <= 0:
            raise ValueError("ship dimensions must be positive")
        diag = np.hypot(self.length[1], self.width[1])
        if diag > min(self.image_extent):
            raise ValueError(f"ships up to {diag:.1f} px long do not fit a {self.image_extent} image")


@dataclass
class Ship:
    cx: float
    cy: float
    length: float
    width: float
    angle: float  # radians, long axis measured from +x towards +y
    level: float = 0.0

    def corners(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = np.array([c, s]) * self.length / 2
        v = np.array([-s, c]) * self.width / 2
        ctr = np.array([self.cx, self.cy])
        return np.array([ctr + u + v, ctr + u - v, ctr - u - v, ctr - u + v])


@dataclass
class Scene:
    image: np.ndarray  # (3, H, W) in [0, 1], quantised to 1/255
    annotations: List[Annotation]
    labels: np.ndarray = field(repr=False)  # (H, W) int, 0 = background
    ships: List[Ship] = field(default_factory=list, repr=False)
    requested: int = 0
    docked: int = 0

    @property
    def placement_failures(self) -> int:
        return self.requested - len(self.annotations)


def rasterize(ship: Ship, shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs + 0.5 - ship.cx
    dy = ys + 0.5 - ship.cy
    c, s = np.cos(ship.angle), np.sin(ship.angle)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    return (np.abs(along) <= ship.length / 2) & (np.abs(across) <= ship.width / 2)


def dilate(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    """Binary dilation with a 3x3 square structuring element."""
    out = mask.astype(bool)
    for _ in range(steps):
        p = np.pad(out, 1)
        grown = np.zeros_like(out)
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                grown |= p[dy : dy + out.shape[0], dx : dx + out.shape[1]]
        out = grown
    return out


def adjacent(a: np.ndarray, b: np.ndarray) -> bool:
    """Adjacency certificate: disjoint masks whose 1-px dilations intersect."""
    return not (a & b).any() and bool((dilate(a) & dilate(b)).any())


def _docked_candidate(rng: np.random.Generator, anchor: Ship, length: float, width: float) -> Ship:
    gap = rng.uniform(0.0, 1.0)
    side = 1.0 if rng.random() < 0.5 else -1.0
    offset = side * ((anchor.width + width) / 2 + gap)
    slide = rng.uniform(-anchor.length / 3, anchor.length / 3)
    c, s = np.cos(anchor.angle), np.sin(anchor.angle)
    cx = anchor.cx + slide * c - offset * s
    cy = anchor.cy + slide * s + offset * c
    return Ship(cx, cy, length, width, anchor.angle)


def synth_scene(spec: SceneSpec, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    width_px, height_px = spec.image_extent
    shape = (height_px, width_px)
    target = int(rng.integers(spec.ship_count[0], spec.ship_count[1] + 1))
    labels = np.zeros(shape, dtype=np.int32)
    ships: List[Ship] = []
    masks: List[np.ndarray] = []
    docked = 0

    for _ in range(target):
        placed = False
        for _attempt in range(MAX_RETRIES):
            length = rng.uniform(*spec.length)
            width = rng.uniform(*spec.width)
            dock_to: Optional[int] = None
            if ships and rng.random() < spec.dock_probability:
                dock_to = int(rng.integers(len(ships)))
                cand = _docked_candidate(rng, ships[dock_to], length, width)
            else:
                angle = np.deg2rad(rng.uniform(*spec.orientation))
                cand = Ship(rng.uniform(0, width_px), rng.uniform(0, height_px), length, width, angle)
            corners = cand.corners()
            if corners.min() < 0 or (corners[:, 0] > width_px).any() or (corners[:, 1] > height_px).any():
                continue
            mask = rasterize(cand, shape)
            if mask.sum() < 4 or (mask & (labels > 0)).any():
                continue
            if dock_to is not None and not adjacent(masks[dock_to], mask):
                continue
            touching = set(np.unique(labels[dilate(mask)]).tolist()) - {0}
            taken = {ships[t - 1].level for t in touching}
            free = [lvl for lvl in PALETTE if all(abs(lvl - t) >= 0.1 - 1e-9 for t in taken)]
            cand.level = float(rng.choice(free if free else PALETTE))
            ships.append(cand)
            masks.append(mask)
            labels[mask] = len(ships)
            docked += dock_to is not None
            placed = True
            break
        if not placed:
            logger.info("seed %d: ship placement failed after %d retries", seed, MAX_RETRIES)

    image = render(ships, labels, spec, rng)
    annotations = [Annotation.from_mask(labels == i + 1) for i in range(len(ships))]
    if len(ships) < target:
        logger.warning("seed %d: placed %d of %d ships", seed, len(ships), target)
    return Scene(image, annotations, labels, ships, target, docked)


def render(ships: List[Ship], labels: np.ndarray, spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = labels.shape
    water = BACKGROUND_LEVEL + 0.03 * rng.standard_normal(3)[:, None, None]
    image = np.broadcast_to(water, (3, h, w)).copy()
    for i, ship in enumerate(ships, start=1):
        tint = ship.level * (1.0 + rng.uniform(-0.04, 0.04, size=3))
        image[:, labels == i] = tint[:, None]
    image += spec.noise * rng.standard_normal(image.shape)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
