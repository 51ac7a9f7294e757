"""Stochastic image augmentation and cross-age triplet assembly.

Images are float pixel cubes in [0, 1] wrapped with an optional reference to
their source record, which lets an age-transform oracle identify the
underlying subject independent of pixel content. All random draws come from
the generator passed in; draw order within each op is fixed and documented on
the op, so a given generator state yields one reproducible output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    CaconError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    DomainError,
    RunFailure,
    ShapeError,
)

AGE_GROUP_YEARS = 5
# ITU-R 601 luma weights, used for the contrast and saturation grays.
_LUMA = np.array([0.299, 0.587, 0.114])


def age_group_of(age_years: int) -> int:
    """Index of the 5-year age group covering age_years (group g spans
    [5g, 5g+5))."""
    if age_years < 0:
        raise DomainError(f"age must be non-negative, got {age_years}")
    return int(age_years) // AGE_GROUP_YEARS


def group_midpoint(group: int) -> float:
    """Representative age for a group: the midpoint of its 5-year span."""
    if group < 0:
        raise DomainError(f"age group must be non-negative, got {group}")
    return AGE_GROUP_YEARS * group + AGE_GROUP_YEARS / 2.0


@dataclass(frozen=True)
class Image:
    """Pixel cube (height, width, 3) in [0, 1] plus a source reference.

    ref is the index of the source record in its dataset (None for images
    with no provenance). Augmented views keep the ref of their source.
    """

    pixels: np.ndarray
    ref: Optional[int] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(
                f"image pixels must be (h, w, 3), got {list(px.shape)}"
            )
        if not np.all(np.isfinite(px)):
            raise DomainError("image pixels must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise DomainError(
                f"image pixels must lie in [0, 1], got "
                f"[{px.min():.6g}, {px.max():.6g}]"
            )
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class AugmentConfig:
    """Stochastic view pipeline settings (the augment config section).

    n_age_groups bounds the uniform target-group draw for the synthesized
    third view.
    """

    crop_scale_range: tuple = (0.5, 1.0)
    color_strength: float = 0.5
    blur_sigma_range: tuple = (0.1, 1.0)
    blur_apply_prob: float = 0.3
    n_age_groups: int = 8

    def validate(self) -> None:
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(
                f"augment.crop_scale_range must satisfy 0 < lo <= hi <= 1, "
                f"got ({lo}, {hi})"
            )
        if not (0.0 <= self.color_strength <= 1.25):
            raise ConfigError(
                f"augment.color_strength must lie in [0, 1.25], "
                f"got {self.color_strength}"
            )
        blo, bhi = self.blur_sigma_range
        if not (0.0 <= blo <= bhi):
            raise ConfigError(
                f"augment.blur_sigma_range must satisfy 0 <= lo <= hi, "
                f"got ({blo}, {bhi})"
            )
        if not (0.0 <= self.blur_apply_prob <= 1.0):
            raise ConfigError(
                f"augment.blur_apply_prob must lie in [0, 1], "
                f"got {self.blur_apply_prob}"
            )
        if self.n_age_groups < 1:
            raise ConfigError(
                f"augment.n_age_groups must be >= 1, got {self.n_age_groups}"
            )


class AgeTransform:
    """Pluggable synthesizer of an age-progressed or -regressed view."""

    def transform(self, img: Image, target_group: int, rng: np.random.Generator) -> Image:
        raise NotImplementedError


class IdentityAgeTransform(AgeTransform):
    """Returns the input unchanged; useful as a null synthesis model."""

    def transform(self, img: Image, target_group: int, rng: np.random.Generator) -> Image:
        return img


@dataclass(frozen=True)
class AugmentedTriplet:
    """Two stochastic views plus one synthesized cross-age view."""

    view_i: Image
    view_j: Image
    view_k: Image
    age_group: int


# ---------------------------------------------------------------------------
# pixel helpers

def _bilinear_resize(px: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resample with edge clamping.

    Equal input and output sizes return the input exactly.
    """
    h, w = px.shape[:2]
    if (h, w) == (out_h, out_w):
        return px.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    y0c = np.clip(y0.astype(np.int64), 0, h - 1)
    y1c = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    x0c = np.clip(x0.astype(np.int64), 0, w - 1)
    x1c = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    top = (1.0 - fx) * px[y0c[:, None], x0c[None, :]] + fx * px[y0c[:, None], x1c[None, :]]
    bot = (1.0 - fx) * px[y1c[:, None], x0c[None, :]] + fx * px[y1c[:, None], x1c[None, :]]
    return (1.0 - fy) * top + fy * bot


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian taps over radius ceil(3*sigma)."""
    if sigma <= 0.0:
        raise DomainError(f"gaussian kernel needs sigma > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offs ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _conv1d_clamped(px: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Correlate one spatial axis with the kernel, clamping to the edge."""
    n = px.shape[axis]
    radius = (kernel.size - 1) // 2
    idx = np.clip(np.arange(n)[:, None] + np.arange(-radius, radius + 1)[None, :],
                  0, n - 1)
    if axis == 0:
        gathered = px[idx]                 # (h, k, w, c)
        return np.tensordot(gathered, kernel, axes=([1], [0]))
    gathered = px[:, idx]                  # (h, w, k, c)
    return np.tensordot(gathered, kernel, axes=([2], [0]))


# ---------------------------------------------------------------------------
# augmentation ops

def random_crop_resize(img: Image, cfg: AugmentConfig, rng: np.random.Generator) -> Image:
    """Crop a uniform-area-fraction window and resize it back bilinearly.

    Draw order: area fraction, top offset, left offset. The window keeps the
    image aspect ratio (side scale sqrt of the area fraction). A full-range
    window, as with crop_scale_range=(1, 1), reproduces the input exactly.
    """
    h, w = img.height, img.width
    if h < 2 or w < 2:
        raise DegenerateInputError(
            f"random_crop_resize needs at least a 2x2 image, got {h}x{w}"
        )
    lo, hi = cfg.crop_scale_range
    s = float(rng.uniform(lo, hi))
    side = math.sqrt(s)
    ch = int(np.clip(round(h * side), 1, h))
    cw = int(np.clip(round(w * side), 1, w))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    window = img.pixels[top:top + ch, left:left + cw]
    out = _bilinear_resize(window, h, w)
    return Image(np.clip(out, 0.0, 1.0), img.ref)


def color_distort(img: Image, cfg: AugmentConfig, rng: np.random.Generator) -> Image:
    """Jitter brightness, then contrast, then saturation.

    Each factor is drawn uniformly from [1 - 0.8*strength, 1 + 0.8*strength]
    in that stage order. A factor of exactly 1 skips its stage, so strength 0
    is the identity. The result is clamped to [0, 1].
    """
    s = cfg.color_strength
    lo, hi = 1.0 - 0.8 * s, 1.0 + 0.8 * s
    fb = float(rng.uniform(lo, hi))
    fc = float(rng.uniform(lo, hi))
    fs = float(rng.uniform(lo, hi))
    px = img.pixels
    if fb != 1.0:
        px = px * fb
    if fc != 1.0:
        m = float((px @ _LUMA).mean())
        px = (px - m) * fc + m
    if fs != 1.0:
        gray = (px @ _LUMA)[:, :, None]
        px = (px - gray) * fs + gray
    if px is img.pixels:
        return img
    return Image(np.clip(px, 0.0, 1.0), img.ref)


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian blur with edge-clamped taps; sigma 0 is identity."""
    if sigma < 0.0:
        raise DomainError(f"blur sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return img
    k = gaussian_kernel(sigma)
    out = _conv1d_clamped(img.pixels, k, axis=0)
    out = _conv1d_clamped(out, k, axis=1)
    return Image(np.clip(out, 0.0, 1.0), img.ref)


def stochastic_view(img: Image, cfg: AugmentConfig, rng: np.random.Generator) -> Image:
    """One crop + color + maybe-blur view.

    Draw order: crop draws, color draws, blur coin, then sigma only when the
    coin lands under blur_apply_prob.
    """
    out = random_crop_resize(img, cfg, rng)
    out = color_distort(out, cfg, rng)
    if float(rng.random()) < cfg.blur_apply_prob:
        sigma = float(rng.uniform(*cfg.blur_sigma_range))
        out = gaussian_blur(out, sigma)
    return out


def make_triplet(img: Image, cfg: AugmentConfig, at: AgeTransform,
                 rng: np.random.Generator) -> AugmentedTriplet:
    """Build the two stochastic views and the synthesized cross-age view.

    The third view is produced by the age transform alone (no stochastic
    pipeline on top); its target group is drawn uniformly over the configured
    group range. Draw order: view_i draws, view_j draws, target group, then
    whatever the transform itself consumes.
    """
    view_i = stochastic_view(img, cfg, rng)
    view_j = stochastic_view(img, cfg, rng)
    group = int(rng.integers(cfg.n_age_groups))
    try:
        view_k = at.transform(img, group, rng)
    except CaconError as e:
        raise type(e)(f"age transform failed for image ref={img.ref}: {e}") from e
    except Exception as e:
        raise RunFailure(f"age transform failed for image ref={img.ref}: {e}") from e
    if view_k.pixels.shape != img.pixels.shape:
        raise ContractError(
            f"age transform changed image shape for ref={img.ref}: "
            f"{list(img.pixels.shape)} -> {list(view_k.pixels.shape)}"
        )
    return AugmentedTriplet(view_i, view_j, view_k, group)
