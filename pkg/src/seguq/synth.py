"""Synthetic binary-segmentation data and test-time corruptions.

Images are single-channel floats in [0, 1]: a smooth textured background
with 1-3 brighter soft-edged ellipses; the mask is the exact union of the
ellipse interiors.  Corruptions model acquisition artifacts at a chosen
severity; severity 0 is always the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError

CORRUPTION_KINDS = ("noise", "blur", "spike", "ghosting")


@dataclass
class SynthDataset:
    images: np.ndarray        # (N, 1, H, W)
    masks: np.ndarray         # (N, H, W) in {0, 1}
    split: dict               # name -> index array
    seed: int

    def subset(self, name):
        idx = self.split[name]
        return self.images[idx], self.masks[idx]


def _one_image(hw, rng, noise_sigma, max_tries=100):
    h, w = hw
    ii, jj = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(max_tries):
        # low-frequency background texture
        img = np.full((h, w), 0.3)
        for _ in range(2):
            fy, fx = rng.uniform(0.5, 2.0, 2)
            phase = rng.uniform(0, 2 * np.pi)
            img += 0.06 * np.cos(2 * np.pi * (fy * ii + fx * jj) / h + phase)
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.25 * h, 0.75 * h, 2)
            ra, rb = rng.uniform(3.0, 0.28 * h, 2)
            ang = rng.uniform(0, np.pi)
            bright = rng.uniform(0.65, 0.95)
            ca, sa = np.cos(ang), np.sin(ang)
            u = (ca * (ii - cy) + sa * (jj - cx)) / ra
            v = (-sa * (ii - cy) + ca * (jj - cx)) / rb
            dist = np.sqrt(u * u + v * v)
            mask |= dist <= 1.0
            alpha = np.clip((1.0 - dist) / 0.25 + 0.5, 0.0, 1.0)
            img = img * (1 - alpha) + bright * alpha
        frac = mask.mean()
        if 0.05 <= frac <= 0.6:
            img += rng.normal(0.0, noise_sigma, (h, w))
            return np.clip(img, 0.0, 1.0), mask.astype(np.float64)
    raise ConfigError("could not draw an image with admissible foreground")


def generate_dataset(n, seed, hw=(32, 32), split_fracs=(0.7, 0.1, 0.2),
                     noise_sigma=0.02) -> SynthDataset:
    """Deterministic dataset of n images with train/val/test splits."""
    if n < 10:
        raise ConfigError("need at least 10 images")
    images = np.empty((n, 1) + tuple(hw))
    masks = np.empty((n,) + tuple(hw))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xda7a, i)))
        img, mask = _one_image(hw, rng, noise_sigma)
        images[i, 0] = img
        masks[i] = mask
    n_train = int(round(split_fracs[0] * n))
    n_val = int(round(split_fracs[1] * n))
    split = {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, n),
    }
    return SynthDataset(images, masks, split, seed)


def corrupt(image, kind, severity, rng):
    """Apply one corruption at the given severity; output clipped to [0, 1].

    noise     add N(0, severity^2) per pixel
    blur      Gaussian blur with std = severity pixels
    spike     add a sinusoidal stripe pattern of amplitude severity
    ghosting  blend with a copy shifted by a quarter height, renormalized
    """
    image = np.asarray(image, dtype=np.float64)
    if severity < 0:
        raise ConfigError("severity must be >= 0")
    if kind not in CORRUPTION_KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}")
    if severity == 0:
        return image.copy()
    chan = image[0] if image.ndim == 3 else image
    h, w = chan.shape
    if kind == "noise":
        out = chan + rng.normal(0.0, severity, chan.shape)
    elif kind == "blur":
        out = gaussian_filter(chan, sigma=severity, mode="reflect")
    elif kind == "spike":
        freq = rng.uniform(3.0, 8.0)
        ang = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        ii, jj = np.mgrid[0:h, 0:w].astype(np.float64)
        stripe = np.sin(2 * np.pi * freq * (np.cos(ang) * ii + np.sin(ang) * jj)
                        / h + phase)
        out = chan + severity * stripe
    else:  # ghosting
        out = (chan + severity * np.roll(chan, h // 4, axis=0)) / (1 + severity)
    out = np.clip(out, 0.0, 1.0)
    return out[None] if image.ndim == 3 else out


def corrupted_set(images, kind, severity, seed):
    """Corrupt a stack of (N, 1, H, W) images with per-image substreams."""
    out = np.empty_like(images)
    for i, img in enumerate(images):
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, 0x00d, i, CORRUPTION_KINDS.index(kind))))
        out[i] = corrupt(img, kind, severity, rng)
    return out
