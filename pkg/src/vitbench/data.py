"""Manifest-driven dataset ingestion, decoding, resizing, and augmentation.

A dataset is a directory of image files plus a manifest CSV. The manifest
fixes the class-name-to-index mapping bit-exactly via a mandatory leading
comment line::

    # classes: normal,pneumonia
    path,class,split
    img/n0001.ppm,normal,train

Images are PPM (P6) or 8-bit PNG; pixels are rescaled to [0,1]; greyscale
images are replicated to three channels when batches are assembled. The
augmentation families (brightness, rotation, flips, shift, zoom, rescale)
fire independently with a configurable probability and draw magnitudes
from the caller's seeded generator, so a fixed seed fixes the pipeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, DataError, DecodeError
from .tensor import Tensor

SPLITS = ("train", "valid", "test")

# Published train/valid/test sizes for the evaluation datasets; used by the
# manifest validator so a mis-assembled local copy fails fast.
MANIFEST_COUNT_PRESETS = {
    "chest-xray": (5693, 671, 771),
    "kvasir": (6400, 800, 800),
    "kvasir-capsule": (19280, 4820, 23061),
}


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    classes: list[str]
    records: list[ManifestRecord]
    root: Path

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def split_records(self, split: str) -> list[ManifestRecord]:
        if split not in SPLITS:
            raise ContractError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == split]

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for r in self.records:
            counts[r.split] += 1
        return counts


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest CSV (see module docstring for format)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# classes:"):
        raise DataError(f"{path}:1: manifest must begin with a '# classes: ...' line")
    classes = [c.strip() for c in lines[0].split(":", 1)[1].split(",")]
    if not classes or any(not c for c in classes):
        raise DataError(f"{path}:1: empty class name in class list")
    if len(set(classes)) != len(classes):
        raise DataError(f"{path}:1: duplicate class names in class list")
    if len(lines) < 2 or [f.strip() for f in lines[1].split(",")] != ["path", "class", "split"]:
        raise DataError(f"{path}:2: expected header 'path,class,split'")

    index = {name: i for i, name in enumerate(classes)}
    records: list[ManifestRecord] = []
    seen_paths: set[str] = set()
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue  # blank line
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        rec_path, cls, split = (f.strip() for f in row)
        if not rec_path:
            raise DataError(f"{path}:{lineno}: empty path")
        if rec_path in seen_paths:
            raise DataError(f"{path}:{lineno}: duplicate path {rec_path!r}")
        seen_paths.add(rec_path)
        if cls not in index:
            raise DataError(
                f"{path}:{lineno}: unknown class {cls!r} (declared: {', '.join(classes)})")
        if split not in SPLITS:
            raise DataError(
                f"{path}:{lineno}: unknown split {split!r} (expected train/valid/test)")
        records.append(ManifestRecord(rec_path, index[cls], split))

    manifest = DatasetManifest(classes, records, root=path.parent)
    counts = manifest.split_counts()
    for required in ("train", "test"):
        if counts[required] == 0:
            raise DataError(f"{path}: manifest has no {required} records")
    return manifest


def check_counts(manifest: DatasetManifest, expected) -> list[str]:
    """Compare split counts to (train, valid, test) expectations; returns a
    list of human-readable diffs (empty when they match)."""
    expected = tuple(int(n) for n in expected)
    if len(expected) != 3:
        raise ContractError(f"expected (train, valid, test) counts, got {expected}")
    counts = manifest.split_counts()
    diffs = []
    for split, want in zip(SPLITS, expected):
        got = counts[split]
        if got != want:
            diffs.append(f"{split}: manifest has {got}, expected {want} ({got - want:+d})")
    return diffs


# -- image IO --------------------------------------------------------------------


def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:2] != b"P6":
        raise DecodeError(f"{path}: not a P6 PPM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines between header fields
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise DecodeError(f"{path}: malformed PPM header fields {fields}") from None
    if width <= 0 or height <= 0:
        raise DecodeError(f"{path}: bad PPM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise DecodeError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise DecodeError(f"{path}: PPM pixel data truncated ({len(raw)} of {need} bytes)")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).astype(np.float64)


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode == "P":
                im = im.convert("RGB")
            if im.mode not in ("L", "RGB"):
                raise DecodeError(f"{path}: unsupported PNG mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.float64)
    except UnidentifiedImageError:
        raise DecodeError(f"{path}: not a decodable PNG file") from None
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def decode_image(path) -> np.ndarray:
    """Read a PPM (P6) or 8-bit PNG into an H*W*C float array of byte-range
    values (0..255). Greyscale stays single-channel; see ``to_rgb``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such image file")
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        return _read_ppm(path)
    if suffix == ".png":
        return _read_png(path)
    raise DecodeError(f"{path}: unsupported image format {suffix!r} (PPM/PNG only)")


def to_rgb(img: np.ndarray) -> np.ndarray:
    """Replicate a single-channel image to three channels; pass RGB through."""
    if img.ndim != 3:
        raise ContractError(f"expected H*W*C image, got shape {img.shape}")
    if img.shape[2] == 3:
        return img
    if img.shape[2] == 1:
        return np.repeat(img, 3, axis=2)
    raise ContractError(f"cannot convert {img.shape[2]}-channel image to RGB")


def save_ppm(path, img: np.ndarray) -> None:
    """Write an H*W*3 array of 0..255 values as a binary P6 file."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"PPM writer needs H*W*3, got {arr.shape}")
    h, w, _ = arr.shape
    payload = np.clip(np.rint(arr), 0, 255).astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(payload)


# -- resize ------------------------------------------------------------------------


def resize(img, target) -> np.ndarray | Tensor:
    """Bilinear resize with corner-aligned sampling: output corner pixels
    coincide with input corners. Output values stay inside the input range."""
    wrap = isinstance(img, Tensor)
    arr = img.data if wrap else np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ContractError(f"resize expects H*W*C, got shape {arr.shape}")
    th, tw = int(target[0]), int(target[1])
    if th <= 0 or tw <= 0:
        raise ContractError(f"target size must be positive, got {(th, tw)}")
    h, w, _ = arr.shape
    if (th, tw) == (h, w):
        return img
    ys = np.arange(th) * ((h - 1) / (th - 1)) if th > 1 else np.zeros(1)
    xs = np.arange(tw) * ((w - 1) / (tw - 1)) if tw > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return Tensor(out) if wrap else out


# -- augmentation --------------------------------------------------------------------


@dataclass
class AugmentPolicy:
    """Which augmentation families are enabled and their magnitudes. Each
    enabled transform fires independently with ``probability`` per sample."""

    brightness: bool = False
    rotation: bool = False
    h_flip: bool = False
    v_flip: bool = False
    shift: bool = False
    zoom: bool = False
    rescale: bool = False
    probability: float = 0.5
    brightness_range: tuple[float, float] = (0.8, 1.2)
    rotation_max_deg: float = 15.0
    shift_max_frac: float = 0.1
    zoom_range: tuple[float, float] = (0.9, 1.1)
    rescale_factor: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ContractError(f"probability must be in [0,1], got {self.probability}")

    def enabled(self) -> list[str]:
        return [name for name in
                ("brightness", "rotation", "h_flip", "v_flip", "shift", "zoom", "rescale")
                if getattr(self, name)]

    @classmethod
    def from_names(cls, names, **magnitudes) -> "AugmentPolicy":
        if isinstance(names, str):
            names = [n.strip() for n in names.split(",") if n.strip()]
        policy = cls(**magnitudes)
        for name in names:
            if not hasattr(policy, name) or not isinstance(getattr(policy, name), bool):
                raise ContractError(f"unknown augmentation {name!r}")
            setattr(policy, name, True)
        return policy


# Default augmentation families per evaluation dataset.
AUGMENT_PRESETS = {
    "chest-xray": ("rescale", "brightness", "zoom", "shift"),
    "kvasir": ("brightness", "rotation", "v_flip"),
    "kvasir-capsule": ("rotation", "v_flip", "h_flip", "shift"),
}


@dataclass
class Sample:
    pixels: np.ndarray  # H*W*C in [0,1]
    label: int


def _warp_bilinear(img: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    """Sample img at fractional source coordinates; out-of-frame reads are 0."""
    h, w, _ = img.shape
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    out = np.zeros_like(img)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            wy = 1.0 - np.abs(src_y - yy)
            wx = 1.0 - np.abs(src_x - xx)
            weight = (wy * wx)[:, :, None]
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(inside[:, :, None], weight * vals, 0.0)
    return out


def _dst_grid(h: int, w: int):
    return np.mgrid[0:h, 0:w].astype(np.float64)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center ((H-1)/2, (W-1)/2); bilinear, zero fill."""
    if degrees == 0.0:
        return img
    h, w, _ = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    dy, dx = _dst_grid(h, w)
    dy -= cy
    dx -= cx
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_y = cos_t * dy - sin_t * dx + cy
    src_x = sin_t * dy + cos_t * dx + cx
    return _warp_bilinear(img, src_y, src_x)


def zoom(img: np.ndarray, factor: float) -> np.ndarray:
    """Scale about the center; factor > 1 magnifies, < 1 shrinks with zero fill."""
    if factor == 1.0:
        return img
    if factor <= 0:
        raise ContractError(f"zoom factor must be > 0, got {factor}")
    h, w, _ = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy, dx = _dst_grid(h, w)
    src_y = (dy - cy) / factor + cy
    src_x = (dx - cx) / factor + cx
    return _warp_bilinear(img, src_y, src_x)


def shift(img: np.ndarray, offset_y: float, offset_x: float) -> np.ndarray:
    """Translate by (offset_y, offset_x) pixels; bilinear, zero fill."""
    if offset_y == 0.0 and offset_x == 0.0:
        return img
    h, w, _ = img.shape
    dy, dx = _dst_grid(h, w)
    return _warp_bilinear(img, dy - offset_y, dx - offset_x)


def augment(sample: Sample, policy: AugmentPolicy, rng: np.random.Generator) -> Sample:
    """Apply the enabled transforms, each firing with policy.probability and
    drawing its magnitude from rng. Label, resolution, and [0,1] range are
    preserved; geometric transforms fill exposed pixels with 0."""
    img = sample.pixels
    h, w, _ = img.shape
    if policy.rescale and rng.random() < policy.probability:
        img = img * policy.rescale_factor
    if policy.brightness and rng.random() < policy.probability:
        img = img * rng.uniform(*policy.brightness_range)
    if policy.rotation and rng.random() < policy.probability:
        img = rotate(img, rng.uniform(-policy.rotation_max_deg, policy.rotation_max_deg))
    if policy.zoom and rng.random() < policy.probability:
        img = zoom(img, rng.uniform(*policy.zoom_range))
    if policy.shift and rng.random() < policy.probability:
        img = shift(img,
                    rng.uniform(-policy.shift_max_frac, policy.shift_max_frac) * h,
                    rng.uniform(-policy.shift_max_frac, policy.shift_max_frac) * w)
    if policy.h_flip and rng.random() < policy.probability:
        img = img[:, ::-1]
    if policy.v_flip and rng.random() < policy.probability:
        img = img[::-1]
    if img is sample.pixels:
        return sample
    return Sample(pixels=np.clip(img, 0.0, 1.0), label=sample.label)


# -- batching -----------------------------------------------------------------------


def load_sample(manifest: DatasetManifest, record: ManifestRecord,
                resolution) -> Sample:
    """Decode, resize, normalize to [0,1], and RGB-replicate one record."""
    raw = decode_image(manifest.root / record.path)
    img = to_rgb(raw) / 255.0
    img = resize(img, resolution)
    return Sample(pixels=img, label=record.label)


def batches(manifest: DatasetManifest, split: str, batch_size: int, resolution,
            policy: AugmentPolicy | None = None,
            rng: np.random.Generator | None = None):
    """Yield (images Tensor[B*h*w*3], labels[B]) over a split.

    The train split is reshuffled per call from ``rng`` and augmented per
    ``policy``; valid/test iterate in manifest order with no augmentation.
    The final partial batch is emitted.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    records = manifest.split_records(split)
    if not records:
        raise DataError(f"split {split!r} has no records")
    is_train = split == "train"
    if is_train and rng is not None:
        records = [records[i] for i in rng.permutation(len(records))]
    do_augment = is_train and policy is not None and policy.enabled()
    if do_augment and rng is None:
        raise ContractError("augmentation needs an rng")
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = []
        labels = []
        for record in chunk:
            sample = load_sample(manifest, record, resolution)
            if do_augment:
                sample = augment(sample, policy, rng)
            images.append(sample.pixels)
            labels.append(sample.label)
        yield Tensor(np.stack(images)), np.asarray(labels)


# -- synthetic datasets ----------------------------------------------------------------


PATTERN_FAMILIES = ("stripes-h", "stripes-v", "disk", "checker")


def _pattern_image(family: str, resolution: int, rng: np.random.Generator) -> np.ndarray:
    """One high-contrast geometric pattern image in [0,1], shape R*R*3."""
    res = resolution
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    period = max(4, res // 4)
    phase = int(rng.integers(0, period))
    if family == "stripes-h":
        mask = ((yy + phase) % period) < period / 2
    elif family == "stripes-v":
        mask = ((xx + phase) % period) < period / 2
    elif family == "disk":
        margin = res / 3.2
        cy = rng.uniform(margin, res - margin)
        cx = rng.uniform(margin, res - margin)
        radius = rng.uniform(res / 5.5, res / 3.5)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    elif family == "checker":
        cell = max(2, period // 2)
        mask = (((yy + phase) // cell + (xx + phase) // cell) % 2) == 0
    else:
        raise ContractError(f"unknown pattern family {family!r}")
    base = rng.uniform(0.05, 0.15)
    high = rng.uniform(0.8, 0.95)
    img = np.where(mask, high, base)[:, :, None].repeat(3, axis=2)
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _split_sizes(n: int) -> tuple[int, int, int]:
    """Stratified 50/25/25 split with train and test never empty."""
    n_train = max(1, n // 2)
    n_valid = (n - n_train) // 2
    n_test = n - n_train - n_valid
    if n_test == 0:
        n_train -= 1
        n_test = 1
    return n_train, n_valid, n_test


def synthesize_toy_dataset(out_dir, num_classes: int = 2, per_class: int = 16,
                           resolution: int = 32, seed: int = 0,
                           imbalance=None, class_names=None) -> Path:
    """Write a deterministic on-disk dataset of geometric-pattern classes and
    its manifest; returns the manifest path.

    Each class draws from one pattern family (stripes, disks, checkers; the
    families cycle for many classes). ``imbalance`` multiplies per-class
    counts, e.g. ``[10, 1]`` with per_class=16 gives 160/16 — a stand-in for
    heavily skewed real datasets.
    """
    if num_classes < 2:
        raise ContractError(f"need at least 2 classes, got {num_classes}")
    if per_class < 2:
        raise ContractError(f"need at least 2 images per class, got {per_class}")
    if class_names is None:
        class_names = []
        for k in range(num_classes):
            family = PATTERN_FAMILIES[k % len(PATTERN_FAMILIES)]
            suffix = k // len(PATTERN_FAMILIES)
            class_names.append(family if suffix == 0 else f"{family}-{suffix + 1}")
    elif len(class_names) != num_classes:
        raise ContractError(
            f"{len(class_names)} class names for {num_classes} classes")
    if imbalance is None:
        counts = [per_class] * num_classes
    else:
        if len(imbalance) != num_classes:
            raise ContractError(
                f"{len(imbalance)} imbalance ratios for {num_classes} classes")
        counts = [max(2, int(round(per_class * r))) for r in imbalance]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for k, (name, count) in enumerate(zip(class_names, counts)):
        family = PATTERN_FAMILIES[k % len(PATTERN_FAMILIES)]
        class_dir = out_dir / name
        class_dir.mkdir(exist_ok=True)
        n_train, n_valid, n_test = _split_sizes(count)
        splits = ["train"] * n_train + ["valid"] * n_valid + ["test"] * n_test
        order = rng.permutation(count)
        for i in range(count):
            img = _pattern_image(family, resolution, rng)
            rel = f"{name}/{name}_{i:04d}.ppm"
            save_ppm(out_dir / rel, img * 255.0)
            rows.append((rel, name, splits[order[i]]))

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# classes: " + ",".join(class_names) + "\n")
        fh.write("path,class,split\n")
        for rel, name, split in rows:
            fh.write(f"{rel},{name},{split}\n")
    return manifest_path
