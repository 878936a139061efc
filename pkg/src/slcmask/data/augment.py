"""Random photometric jitter followed by a random rotation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from ..geometry.annotations import Annotation
from ..geometry.boxes import Box

LUMA = np.array([0.299, 0.587, 0.114])
SMOOTH_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


@dataclass(frozen=True)
class AugmentPolicy:
    brightness: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)
    color: Tuple[float, float] = (0.8, 1.2)
    sharpness: Tuple[float, float] = (0.8, 1.2)
    rotation: Tuple[float, float] = (0.0, 360.0)
    rotation_step: float = 0.0  # >0 snaps sampled angles to multiples of this
    seed: int = 0

    def __post_init__(self):
        for name in ("brightness", "contrast", "color", "sharpness"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi) or not np.isfinite(hi):
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        lo, hi = self.rotation
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError(f"invalid rotation range {self.rotation}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentPolicy":
        one = (1.0, 1.0)
        return cls(one, one, one, one, (0.0, 0.0), 0.0, seed)


class Augmented(NamedTuple):
    image: np.ndarray
    annotations: List[Annotation]
    dropped: int


def _factor(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    return lo if lo == hi else float(rng.uniform(lo, hi))


def _blend(base: np.ndarray, img: np.ndarray, f: float) -> np.ndarray:
    return np.clip(base + f * (img - base), 0.0, 1.0)


def adjust_brightness(img: np.ndarray, f: float) -> np.ndarray:
    return np.clip(img * f, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, f: float) -> np.ndarray:
    mean = float(np.tensordot(LUMA, img, axes=1).mean())
    return _blend(np.full_like(img, mean), img, f)


def adjust_color(img: np.ndarray, f: float) -> np.ndarray:
    gray = np.tensordot(LUMA, img, axes=1)
    return _blend(np.broadcast_to(gray, img.shape), img, f)


def adjust_sharpness(img: np.ndarray, f: float) -> np.ndarray:
    c, h, w = img.shape
    smooth = img.copy()
    if h > 2 and w > 2:
        acc = np.zeros((c, h - 2, w - 2))
        for dy in range(3):
            for dx in range(3):
                acc += SMOOTH_KERNEL[dy, dx] * img[:, dy : dy + h - 2, dx : dx + w - 2]
        smooth[:, 1:-1, 1:-1] = acc  # border left untouched
    return _blend(smooth, img, f)


def _rotation_sources(angle_deg: float, shape: Tuple[int, int]):
    """Source coordinates (continuous, pixel-centre based) for every output pixel."""
    h, w = shape
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    ys, xs = np.mgrid[0:h, 0:w]
    xo = xs + 0.5 - w / 2
    yo = ys + 0.5 - h / 2
    xsrc = c * xo - s * yo + w / 2 - 0.5
    ysrc = s * xo + c * yo + h / 2 - 0.5
    return xsrc, ysrc


def rotate_points(points: np.ndarray, angle_deg: float, shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    x = points[:, 0] - w / 2
    y = points[:, 1] - h / 2
    return np.stack([c * x + s * y + w / 2, -s * x + c * y + h / 2], axis=1)


def _bilinear(img: np.ndarray, xsrc: np.ndarray, ysrc: np.ndarray) -> np.ndarray:
    c, h, w = img.shape
    x0 = np.floor(xsrc).astype(np.int64)
    y0 = np.floor(ysrc).astype(np.int64)
    fx, fy = xsrc - x0, ysrc - y0
    out = np.zeros((c,) + xsrc.shape)
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + oy, x0 + ox
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(ok, wy * wx, 0.0) * vals
    return out


def _nearest(mask: np.ndarray, xsrc: np.ndarray, ysrc: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    xi = np.floor(xsrc + 0.5).astype(np.int64)
    yi = np.floor(ysrc + 0.5).astype(np.int64)
    ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    return ok & mask[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]


def rotate(image: np.ndarray, annotations: Sequence[Annotation], angle_deg: float) -> Augmented:
    """Rotate counter-clockwise about the image centre, keeping the frame size."""
    _, h, w = image.shape
    quarter = angle_deg / 90.0
    exact = h == w and float(quarter).is_integer()
    if exact:
        k = int(quarter) % 4
        out_img = np.ascontiguousarray(np.rot90(image, k, axes=(1, 2)))
    else:
        xsrc, ysrc = _rotation_sources(angle_deg, (h, w))
        out_img = _bilinear(image, xsrc, ysrc)
    kept, dropped = [], 0
    for ann in annotations:
        if exact:
            mask = np.ascontiguousarray(np.rot90(ann.mask, k))
        else:
            mask = _nearest(ann.mask, xsrc, ysrc)
        b = ann.box
        corners = np.array([[b.x1, b.y1], [b.x2, b.y1], [b.x2, b.y2], [b.x1, b.y2]])
        rc = rotate_points(corners, angle_deg, (h, w))
        if exact:
            rc = np.round(rc, 9)
        x1, y1 = max(rc[:, 0].min(), 0.0), max(rc[:, 1].min(), 0.0)
        x2, y2 = min(rc[:, 0].max(), float(w)), min(rc[:, 1].max(), float(h))
        if not mask.any() or x2 <= x1 or y2 <= y1:
            dropped += 1
            continue
        kept.append(Annotation(Box(x1, y1, x2, y2), mask, ann.class_id))
    return Augmented(out_img, kept, dropped)


def augment(image: np.ndarray, annotations: Sequence[Annotation], policy: AugmentPolicy, seed=None) -> Augmented:
    """Apply the policy; the RNG stream is ``(policy.seed, seed)``.

    Photometric factors equal to 1 are skipped so that an identity policy
    returns bit-identical pixels.
    """
    rng = np.random.default_rng([policy.seed] if seed is None else [policy.seed, seed])
    img = np.asarray(image, dtype=np.float64)
    for op, bounds in (
        (adjust_brightness, policy.brightness),
        (adjust_contrast, policy.contrast),
        (adjust_color, policy.color),
        (adjust_sharpness, policy.sharpness),
    ):
        f = _factor(rng, bounds)
        if f != 1.0:
            img = op(img, f)
    angle = _factor(rng, policy.rotation) if policy.rotation[0] != policy.rotation[1] else policy.rotation[0]
    if policy.rotation_step > 0:
        angle = policy.rotation_step * np.floor(angle / policy.rotation_step)
    if angle % 360.0 == 0.0:
        return Augmented(img if img is not image else img.copy(), list(annotations), 0)
    return rotate(img, annotations, angle)
