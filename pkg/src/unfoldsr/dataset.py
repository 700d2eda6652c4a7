"""Training-pair construction and synthetic problem generation.

A training sample is a triple of equally sized planes: the bicubic-degraded
then re-upscaled target ``y_up``, the guidance luminance ``z``, and the
ground-truth target ``x``.  Scenes live on disk as
``<root>/<scene>/target.pgm`` (HR target modality) plus
``<root>/<scene>/guide.ppm`` (HR RGB guidance).

``gen_synthetic`` builds seeded instances of the l1-l1 problem for solver
and encoder tests: a unit-column Gaussian dictionary, a sparse truth code,
and side information equal to the truth with a chosen number of entries
resampled.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, MissingDataError
from .imageops import ImagePlane, bicubic_resize, load_pgm, load_ppm, rgb_to_luma
from .solvers import Dictionary, SideInfoProblem

__all__ = [
    "PairedSample",
    "SyntheticSpec",
    "degrade",
    "sample_crops",
    "gen_synthetic",
    "load_scene",
    "load_dataset",
]


@dataclass
class PairedSample:
    """Aligned (degraded target, guidance luminance, HR target) planes."""

    y_up: ImagePlane
    z: ImagePlane
    x: ImagePlane

    def __post_init__(self):
        dims = {(p.height, p.width) for p in (self.y_up, self.z, self.x)}
        if len(dims) != 1:
            raise InvalidParameterError(f"sample planes must share dimensions, got {sorted(dims)}")

    @property
    def height(self) -> int:
        return self.x.height

    @property
    def width(self) -> int:
        return self.x.width


@dataclass
class SyntheticSpec:
    """Recipe for one seeded synthetic l1-l1 instance."""

    n_y: int
    n_alpha: int
    sparsity: int
    side_perturb: int = 0
    noise_std: float = 0.0
    seed: int = 0
    lam: float = 0.1

    def __post_init__(self):
        if self.sparsity > self.n_alpha or self.side_perturb > self.n_alpha:
            raise InvalidParameterError("sparsity and side_perturb must not exceed n_alpha")
        if self.sparsity < 0 or self.side_perturb < 0 or self.noise_std < 0:
            raise InvalidParameterError("sparsity, side_perturb and noise_std must be nonnegative")


def degrade(x: ImagePlane, scale: int) -> ImagePlane:
    """Bicubic downscale by ``scale`` then upscale back (the LR simulator).

    Crops to the largest scale-divisible region first, so the output dims
    equal the cropped input dims.
    """
    if scale < 2:
        raise InvalidParameterError(f"scale must be >= 2, got {scale}")
    h = (x.height // scale) * scale
    w = (x.width // scale) * scale
    if h == 0 or w == 0:
        raise InvalidParameterError(f"image {x.height}x{x.width} smaller than scale {scale}")
    cropped = ImagePlane(x.pixels[:h, :w])
    low = bicubic_resize(cropped, w // scale, h // scale)
    return bicubic_resize(low, w, h)


def crop_divisible(img: ImagePlane, scale: int) -> ImagePlane:
    """Largest top-left region with both dims divisible by ``scale``."""
    h = (img.height // scale) * scale
    w = (img.width // scale) * scale
    if h == 0 or w == 0:
        raise InvalidParameterError(f"image {img.height}x{img.width} smaller than scale {scale}")
    return ImagePlane(img.pixels[:h, :w])


def sample_crops(pair: PairedSample, crop: int, n: int, seed: int) -> list[PairedSample]:
    """Draw ``n`` aligned random crops of size ``crop`` x ``crop``."""
    if crop > pair.height or crop > pair.width:
        raise InvalidParameterError(f"crop {crop} exceeds sample dims {pair.height}x{pair.width}")
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, pair.height - crop + 1, size=n)
    lefts = rng.integers(0, pair.width - crop + 1, size=n)
    out = []
    for top, left in zip(tops, lefts):
        window = (slice(top, top + crop), slice(left, left + crop))
        out.append(PairedSample(
            y_up=ImagePlane(pair.y_up.pixels[window].copy()),
            z=ImagePlane(pair.z.pixels[window].copy()),
            x=ImagePlane(pair.x.pixels[window].copy()),
        ))
    return out


def gen_synthetic(spec: SyntheticSpec) -> tuple[SideInfoProblem, np.ndarray]:
    """Seeded l1-l1 instance plus the true sparse code it was built from."""
    rng = np.random.default_rng(spec.seed)
    d = rng.normal(size=(spec.n_y, spec.n_alpha))
    d /= np.linalg.norm(d, axis=0)
    alpha = np.zeros(spec.n_alpha)
    support = rng.choice(spec.n_alpha, size=spec.sparsity, replace=False)
    alpha[support] = rng.normal(size=spec.sparsity)
    noise = rng.normal(size=spec.n_y)
    y = d @ alpha + spec.noise_std * noise
    side = alpha.copy()
    if spec.side_perturb:
        idx = rng.choice(spec.n_alpha, size=spec.side_perturb, replace=False)
        side[idx] = rng.normal(size=spec.side_perturb)
    problem = SideInfoProblem(dict=Dictionary(d), y=y, lam=spec.lam, side=side)
    return problem, alpha


def load_scene(scene_dir: str, scale: int) -> PairedSample:
    """Build one PairedSample from ``<scene_dir>/target.pgm`` + ``guide.ppm``."""
    target_path = os.path.join(scene_dir, "target.pgm")
    guide_path = os.path.join(scene_dir, "guide.ppm")
    if not os.path.isfile(target_path) or not os.path.isfile(guide_path):
        raise MissingDataError(f"scene {scene_dir!r} needs target.pgm and guide.ppm")
    x = crop_divisible(load_pgm(target_path), scale)
    guide = rgb_to_luma(load_ppm(guide_path))
    if guide.height < x.height or guide.width < x.width:
        raise InvalidParameterError(
            f"guide {guide.height}x{guide.width} smaller than target {x.height}x{x.width}")
    z = ImagePlane(guide.pixels[:x.height, :x.width])
    return PairedSample(y_up=degrade(x, scale), z=z, x=x)


def load_dataset(root: str, scale: int) -> list[tuple[str, PairedSample]]:
    """All scenes under ``root``, sorted by name for reproducibility."""
    if not os.path.isdir(root):
        raise MissingDataError(f"dataset root {root!r} is not a directory")
    scenes = sorted(
        name for name in os.listdir(root)
        if os.path.isdir(os.path.join(root, name))
        and os.path.isfile(os.path.join(root, name, "target.pgm"))
    )
    if not scenes:
        raise MissingDataError(f"no scenes found under {root!r}")
    return [(name, load_scene(os.path.join(root, name), scale)) for name in scenes]
