"""Dataset ingestion, preprocessing, mirroring, part cropping, and
split-protocol generation.

Manifest format: CSV with header `subject_id,camera_id,index,path`,
UTF-8, image paths relative to the manifest file.  Images are decoded,
bilinearly resized to the target geometry and kept as raw [0,255]
float64 [3,H,W] tensors; `normalize_pixels` maps them to [-1,1] on the
way into the network (crop_parts does this).
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ProtocolError
from .network import NetConfig

TARGET_H = 128
TARGET_WIDTHS = (40, 48)
PART_H = 48
PART_OFFSETS = (0, 40, 80)


@dataclass(frozen=True)
class PersonImage:
    subject_id: str
    camera_id: str
    index: int
    pixels: np.ndarray  # [3,H,W] float64, values in [0,255]
    mirrored: bool = False


@dataclass(frozen=True)
class ManifestRow:
    """Undecoded manifest entry; enough for split generation."""

    subject_id: str
    camera_id: str
    index: int
    path: str
    mirrored: bool = False


@dataclass(frozen=True)
class SplitSpec:
    """One train/test split; repeat 0 is the Dev view, 1..10 the Test views."""

    protocol: str  # viper_style | prid_style
    repeat: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("viper_style", "prid_style"):
            raise ProtocolError(f"unknown protocol {self.protocol!r}")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of [C,H,W] via pixel-center alignment."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Map raw [0,255] values to [-1,1]."""
    return (pixels / 255.0 - 0.5) * 2.0


def decode_image(path: Path, width: int, height: int = TARGET_H) -> np.ndarray:
    """Decode to RGB, resize to [3,height,width], values in [0,255]."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError as exc:
        raise DataError(f"image file not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"undecodable image: {path}: {exc}") from exc
    return resize_bilinear(arr.transpose(2, 0, 1), height, width)


def read_manifest_rows(path) -> list:
    """Parse a manifest CSV into ManifestRows without touching pixels."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    rows = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"subject_id", "camera_id", "index", "path"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise DataError(f"manifest header must contain {sorted(need)}")
        for row in reader:
            key = (row["subject_id"], row["camera_id"], int(row["index"]))
            if key in seen:
                raise DataError(f"duplicate manifest row (subject,camera,index)={key}")
            seen.add(key)
            rows.append(ManifestRow(row["subject_id"], row["camera_id"],
                                    int(row["index"]), row["path"]))
    return rows


def load_manifest(path, width: int = 48, threads: int = 1) -> list:
    """Load a manifest CSV into decoded, resized PersonImages."""
    if width not in TARGET_WIDTHS:
        raise DataError(f"target width must be one of {TARGET_WIDTHS}, got {width}")
    rows = read_manifest_rows(path)
    base = Path(path).parent

    def build(row):
        pixels = decode_image(base / row.path, width)
        return PersonImage(row.subject_id, row.camera_id, row.index, pixels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(build, rows))
    return [build(r) for r in rows]


def mirror(img: PersonImage) -> PersonImage:
    """Horizontal flip; applying twice restores the original bit-exactly."""
    return replace(img, pixels=img.pixels[:, :, ::-1].copy(), mirrored=not img.mirrored)


def augment_with_mirrors(images: list) -> list:
    """Originals followed by their mirrors: doubles the set."""
    return list(images) + [mirror(im) for im in images]


def crop_parts(img: PersonImage, config: NetConfig | None = None) -> np.ndarray:
    """Three overlapping horizontal bands, normalized for the network.

    Returns [3, C, part_h, W].  The default scheme takes 48-row bands at
    offsets 0/40/80 of a 128-row image: adjacent parts share 8 rows and
    the union covers every row.
    """
    cfg = config or NetConfig(image_w=img.pixels.shape[2])
    c, h, w = img.pixels.shape
    if h != cfg.image_h:
        raise DataError(f"image height {h} does not match part scheme ({cfg.image_h})")
    if w != cfg.image_w:
        raise DataError(f"image width {w} does not match part scheme ({cfg.image_w})")
    parts = np.stack([img.pixels[:, o:o + cfg.part_h, :] for o in cfg.part_offsets])
    return normalize_pixels(parts)


def part_batch(images: list, config: NetConfig | None = None) -> np.ndarray:
    """Stack crop_parts over a list of images: [N, 3, C, part_h, W]."""
    return np.stack([crop_parts(im, config) for im in images])


def _subjects_by_camera(dataset: list):
    cams = sorted({im.camera_id for im in dataset})
    if len(cams) != 2:
        raise ProtocolError(f"protocol needs exactly 2 cameras, found {len(cams)}: {cams}")
    by_cam = {c: sorted({im.subject_id for im in dataset if im.camera_id == c}) for c in cams}
    return cams, by_cam


def _pick(dataset, subject, camera):
    """Lowest-index image of (subject, camera)."""
    best = None
    for im in dataset:
        if im.subject_id == subject and im.camera_id == camera and not im.mirrored:
            if best is None or im.index < best.index:
                best = im
    if best is None:
        raise ProtocolError(f"no image for subject {subject} in camera {camera}")
    return best


def make_split(dataset: list, spec: SplitSpec):
    """Deterministic (train, probe, gallery) image lists per the protocol.

    viper_style: half the subjects train, the other half test; camera A
    of a test subject probes against camera B in the gallery.
    prid_style: 100 of the first 200 shared subjects train; the other
    100 probe from camera A; the gallery is every camera-B subject not
    used for training.
    """
    cams, by_cam = _subjects_by_camera(dataset)
    cam_a, cam_b = cams
    rng = np.random.default_rng((spec.seed, spec.repeat))
    if spec.protocol == "viper_style":
        subjects = sorted({im.subject_id for im in dataset})
        if len(subjects) < 2:
            raise ProtocolError(f"viper_style needs >= 2 subjects, got {len(subjects)}")
        order = rng.permutation(len(subjects))
        half = len(subjects) // 2
        train_subj = {subjects[i] for i in order[:half]}
        test_subj = [subjects[i] for i in sorted(order[half:])]
        train = [im for im in dataset if im.subject_id in train_subj]
        probe = [_pick(dataset, s, cam_a) for s in sorted(test_subj)]
        gallery = [_pick(dataset, s, cam_b) for s in sorted(test_subj)]
        return train, probe, gallery

    shared = sorted(set(by_cam[cam_a]) & set(by_cam[cam_b]))
    if len(shared) < 200:
        raise ProtocolError(
            f"prid_style needs >= 200 subjects shared by both cameras, got {len(shared)}")
    first200 = shared[:200]
    order = rng.permutation(200)
    train_subj = {first200[i] for i in order[:100]}
    probe_subj = sorted(first200[i] for i in order[100:])
    gallery_subj = sorted(s for s in by_cam[cam_b] if s not in train_subj)
    train = [im for im in dataset if im.subject_id in train_subj]
    probe = [_pick(dataset, s, cam_a) for s in probe_subj]
    gallery = [_pick(dataset, s, cam_b) for s in gallery_subj]
    return train, probe, gallery


def write_split_csv(path, train, probe, gallery) -> None:
    """Persist a split as (subject_id, role) rows for reproducibility."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "role"])
        for im in sorted({im.subject_id for im in train}):
            writer.writerow([im, "train"])
        for im in probe:
            writer.writerow([im.subject_id, "probe"])
        for im in gallery:
            writer.writerow([im.subject_id, "gallery"])


def read_split_csv(path):
    """Return ({train subjects}, [probe subjects], [gallery subjects])."""
    train, probe, gallery = set(), [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"split file not found: {path}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["subject_id", "role"]:
            raise DataError(f"bad split file header in {path}")
        for row in reader:
            role = row["role"]
            if role == "train":
                train.add(row["subject_id"])
            elif role == "probe":
                probe.append(row["subject_id"])
            elif role == "gallery":
                gallery.append(row["subject_id"])
            else:
                raise DataError(f"unknown role {role!r} in {path}")
    return train, probe, gallery


def resolve_split(dataset: list, split_path):
    """Materialize (train, probe, gallery) image lists from a split file."""
    cams, _ = _subjects_by_camera(dataset)
    cam_a, cam_b = cams
    train_subj, probe_subj, gallery_subj = read_split_csv(split_path)
    train = [im for im in dataset if im.subject_id in train_subj]
    probe = [_pick(dataset, s, cam_a) for s in probe_subj]
    gallery = [_pick(dataset, s, cam_b) for s in gallery_subj]
    return train, probe, gallery
