"""Synthetic two-camera re-identification data for desk-scale runs.

Each subject is a color-block figure (head band, torso block, leg
block) rendered by two simulated cameras that disagree on gain, color
cast, geometry jitter and noise.  Useful for end-to-end pipeline tests
when no licensed dataset is at hand.
"""

import csv
from pathlib import Path

import numpy as np

from .dataio import PersonImage

CAMERAS = ("a", "b")
# per-camera rendering differences: (gain, per-channel offset, row shift)
_CAMERA_FX = {
    "a": (1.0, np.array([0.0, 0.0, 0.0]), 0),
    "b": (0.82, np.array([12.0, -8.0, 6.0]), 4),
}
_NOISE_SIGMA = 8.0


def _subject_appearance(rng):
    torso = rng.uniform(30.0, 225.0, size=3)
    legs = rng.uniform(30.0, 225.0, size=3)
    head = rng.uniform(140.0, 210.0)
    return torso, legs, head


def render_person(subject_seed: int, camera_id: str, image_seed: int,
                  height: int = 128, width: int = 48) -> np.ndarray:
    """One [3,H,W] rendering in [0,255]."""
    srng = np.random.default_rng(subject_seed)
    torso, legs, head = _subject_appearance(srng)
    gain, offset, shift = _CAMERA_FX[camera_id]
    irng = np.random.default_rng(image_seed)
    jitter = irng.integers(-3, 4)

    img = np.full((3, height, width), 110.0)
    head_end = int(0.16 * height) + shift // 2
    torso_end = int(0.55 * height) + shift + int(jitter)
    legs_end = int(0.94 * height) + shift + int(jitter)
    margin = max(2, width // 8)
    img[:, 2:head_end, margin:width - margin] = head
    img[:, head_end:torso_end, margin:width - margin] = torso[:, None, None]
    img[:, torso_end:legs_end, margin:width - margin] = legs[:, None, None]
    img = img * gain + offset[:, None, None]
    img += irng.normal(0.0, _NOISE_SIGMA, size=img.shape)
    return np.clip(img, 0.0, 255.0)


def generate_synthetic_dataset(n_subjects: int = 40, seed: int = 0,
                               height: int = 128, width: int = 48) -> list:
    """PersonImages for n_subjects, one image per camera per subject."""
    images = []
    for s in range(n_subjects):
        for ci, cam in enumerate(CAMERAS):
            pixels = render_person(
                subject_seed=seed * 100003 + s,
                camera_id=cam,
                image_seed=seed * 100003 + s * 7 + ci * 3 + 1,
                height=height, width=width)
            images.append(PersonImage(f"s{s:03d}", cam, 0, pixels))
    return images


def write_synthetic_dataset(out_dir, n_subjects: int = 40, seed: int = 0,
                            height: int = 128, width: int = 48):
    """Write PNGs plus a manifest.csv; returns the manifest path."""
    from PIL import Image

    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    rows = []
    for im in generate_synthetic_dataset(n_subjects, seed, height, width):
        name = f"{im.subject_id}_{im.camera_id}_{im.index}.png"
        arr = np.round(im.pixels).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr).save(img_dir / name)
        rows.append([im.subject_id, im.camera_id, im.index, f"images/{name}"])
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "camera_id", "index", "path"])
        writer.writerows(rows)
    return manifest
