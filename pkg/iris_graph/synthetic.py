import os
import logging
from dataclasses import dataclass
from typing import Optional, Text

import numpy as np
from pandas import DataFrame
from scipy import ndimage

from .dataset import CorpusManifest, save_manifest
from .exceptions import ConfigurationException
from .imaging import Image, _to_intensities, save_pgm

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.csv'


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Settings of a generated corpus. ``perturbation`` is the amplitude of the per-image noise field on the [0, 1]
    intensity scale and also scales the affine jitter; 0 makes every image of a user identical.
    """
    n_users: int = 10
    images_per_user: int = 20
    image_size: int = 200
    perturbation: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 2:
            raise ConfigurationException(f"A synthetic corpus needs at least 2 users, got {self.n_users}.")
        if self.images_per_user < 5:
            raise ConfigurationException(f"A synthetic corpus needs at least 5 images per user, got {self.images_per_user}.")
        if self.image_size < 8:
            raise ConfigurationException(f"Synthetic images must be at least 8 pixels wide, got {self.image_size}.")
        if not 0 <= self.perturbation <= 1:
            raise ConfigurationException(f"The perturbation strength must lie in [0, 1], got {self.perturbation}.")


def value_noise(rng: np.random.Generator, grid: int, size: int) -> np.ndarray:
    """
    Smooth noise in [0, 1]: random values on a grid x grid lattice upsampled with cubic splines.
    """
    lattice = rng.uniform(0.0, 1.0, size=(grid, grid))
    field = ndimage.zoom(lattice, size / grid, order=3, mode='nearest', grid_mode=True)[:size, :size]
    return np.clip(field, 0.0, 1.0)


def user_texture(spec: SyntheticSpec, user_index: int) -> np.ndarray:
    """
    The base texture of a user: value noise plus a plane wave whose frequency and phase are drawn per user.
    """
    rng = np.random.default_rng([spec.seed, user_index])
    size = spec.image_size

    noise = value_noise(rng, int(rng.integers(3, 6)), size)

    frequency = rng.uniform(0.5, 1.5, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    rows, cols = np.mgrid[0:size, 0:size] / size
    wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * (frequency[0] * rows + frequency[1] * cols) + phase)

    texture = 0.6 * noise + 0.4 * wave
    return 0.1 + 0.8 * (texture - texture.min()) / max(np.ptp(texture), 1e-12)


def perturb(texture: np.ndarray, spec: SyntheticSpec, user_index: int, image_index: int) -> np.ndarray:
    if spec.perturbation == 0:
        return texture

    rng = np.random.default_rng([spec.seed, user_index, image_index])

    angle = rng.uniform(-5.0, 5.0) * spec.perturbation
    shift = rng.uniform(-4.0, 4.0, size=2) * spec.perturbation
    moved = ndimage.rotate(texture, angle, reshape=False, order=1, mode='nearest')
    moved = ndimage.shift(moved, shift, order=1, mode='nearest')

    noise = value_noise(rng, 4, spec.image_size) * 2.0 - 1.0
    return moved + spec.perturbation * noise


def synthetic_image(spec: SyntheticSpec, user_index: int, image_index: int, texture: Optional[np.ndarray] = None) -> Image:
    texture = user_texture(spec, user_index) if texture is None else texture
    field = perturb(texture, spec, user_index, image_index)
    return Image(_to_intensities(np.clip(field, 0.0, 1.0) * 255.0))


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir: Text) -> CorpusManifest:
    """
    Write a synthetic corpus of 8-bit graymaps with a manifest.

    :param spec: the SyntheticSpec.
    :param out_dir: the destination directory; it is created if needed.
    :return: the CorpusManifest, with image paths relative to out_dir.
    """
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    for u in range(spec.n_users):
        user = f"user{u:03d}"
        texture = user_texture(spec, u)
        for i in range(spec.images_per_user):
            name = f"{user}_{i:03d}.pgm"
            save_pgm(synthetic_image(spec, u, i, texture), os.path.join(out_dir, name))
            rows.append({'user_id': user, 'image_path': name, 'mask_path': '', 'distance_m': 4.0 + (i % 5)})

    manifest = CorpusManifest(DataFrame(rows), spec.seed)
    save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    logger.info(f"Wrote {len(rows)} synthetic image(s) of {spec.n_users} user(s) to {out_dir}.")
    return manifest
