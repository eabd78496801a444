"""Synthetic face-forgery data with pixel-exact masks, manifests and
domain-shift transforms.

Pristine images are procedurally drawn "faces" carrying per-image sensor
noise. A forgery pastes a region of a low-pass filtered donor face into a
base face, standing in for the smoother texture of a synthesized face. The
pasted content also carries a faint period-2 checkerboard, the kind of trace
transposed-convolution upsampling leaves in generated images.
Images live in memory as ``(H, W, 3)`` float32 arrays quantized to 8-bit
levels, so what is written to PNG is exactly what was generated.
"""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

logger = logging.getLogger(__name__)

REAL, FAKE = 0, 1
LABEL_NAMES = {REAL: "real", FAKE: "fake"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}
SPLITS = ("train", "val", "test")
SHIFT_KINDS = ("jpeg", "blur", "resize")


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    label: int
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    domain_tag: str = "clean"

    def __post_init__(self) -> None:
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(f"mask shape {self.mask.shape} does not match image {self.image.shape[:2]}")
        if self.label == REAL and self.mask.any():
            raise ValueError("real sample with a non-empty mask")
        if self.label == FAKE and not self.mask.any():
            raise ValueError("fake sample with an empty mask")


@dataclass
class ForgeryParams:
    min_frac: float = 0.05
    max_frac: float = 0.35
    blend_width: float = 0.0
    shape: str = "random"  # "ellipse", "polygon" or "random"
    donor_smoothing: float = 1.0  # gaussian sigma applied to donor content
    checker_amplitude: float = 0.06  # period-2 upsampling-style artifact on donor content


def _quantize(img: np.ndarray) -> np.ndarray:
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _ellipse(yy, xx, cy, cx, ry, rx, theta=0.0):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return u * u + v * v


def generate_pristine(rng: np.random.Generator, size: int = 64, patch_size: int = 8) -> Sample:
    if size % patch_size:
        raise ValueError(f"size {size} is not divisible by patch size {patch_size}")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size

    # background: two-colour gradient plus a few soft blobs
    c0, c1 = rng.uniform(0.05, 0.95, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)[..., None]
    img = c0 * (1 - t) + c1 * t
    for _ in range(3):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))[..., None]
        img = img + blob * rng.uniform(-0.15, 0.15, 3)

    # face: shaded skin ellipse with eyes and mouth
    cy, cx = rng.uniform(0.44, 0.56, 2)
    ry, rx = rng.uniform(0.32, 0.42), rng.uniform(0.24, 0.33)
    d = _ellipse(yy, xx, cy, cx, ry, rx, rng.uniform(-0.2, 0.2))
    skin = np.array([rng.uniform(0.55, 0.95), rng.uniform(0.4, 0.75), rng.uniform(0.3, 0.6)])
    shade = (1.0 - 0.25 * np.clip(d, 0, 1))[..., None]
    face = (d <= 1.0)[..., None]
    img = np.where(face, skin * shade, img)
    feature = np.array(rng.uniform(0.05, 0.3, 3))
    ey, ex = cy - 0.3 * ry, 0.45 * rx
    for sx in (-1, 1):
        eye = _ellipse(yy, xx, ey, cx + sx * ex, 0.05, 0.08) <= 1.0
        img[eye] = feature
    mouth = _ellipse(yy, xx, cy + 0.5 * ry, cx, 0.035, 0.35 * rx) <= 1.0
    img[mouth] = feature * 1.5

    # per-image sensor noise
    sigma = rng.uniform(0.02, 0.04)
    img = img + rng.normal(0.0, sigma, img.shape)
    mask = np.zeros((size, size), dtype=np.uint8)
    return Sample(_quantize(img), REAL, mask, "clean")


def _region(rng: np.random.Generator, size: int, frac: float, shape: str) -> np.ndarray:
    area = frac * size * size
    if shape == "ellipse":
        aspect = rng.uniform(0.6, 1.6)
        ry = np.sqrt(area / (np.pi * aspect))
        rx = ry * aspect
        reach = max(rx, ry)
        cy, cx = rng.uniform(min(reach, size / 2), max(size - reach, size / 2), 2)
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        return (_ellipse(yy, xx, cy, cx, ry, rx, rng.uniform(0, np.pi)) <= 1.0).astype(np.uint8)
    # star-shaped polygon scaled to the target area
    k = int(rng.integers(5, 10))
    angles = np.sort(rng.uniform(0, 2 * np.pi, k))
    radii = rng.uniform(0.6, 1.0, k)
    poly_area = 0.5 * np.abs(
        np.sum(radii * np.roll(radii, -1) * np.sin(np.roll(angles, -1) - angles))
    )
    scale = np.sqrt(area / max(poly_area, 1e-9))
    reach = scale * radii.max()
    cy, cx = rng.uniform(min(reach, size / 2), max(size - reach, size / 2), 2)
    pts = [(cx + scale * r * np.cos(a), cy + scale * r * np.sin(a)) for a, r in zip(angles, radii)]
    canvas = Image.new("L", (size, size), 0)
    ImageDraw.Draw(canvas).polygon(pts, fill=1)
    return np.asarray(canvas, dtype=np.uint8)


def sample_region(rng: np.random.Generator, size: int, params: ForgeryParams, max_tries: int = 200) -> np.ndarray:
    """Binary region whose area fraction lies in ``[min_frac, max_frac]``."""
    for _ in range(max_tries):
        shape = params.shape if params.shape != "random" else ("ellipse", "polygon")[int(rng.integers(2))]
        mask = _region(rng, size, rng.uniform(params.min_frac, params.max_frac), shape)
        if params.min_frac <= mask.mean() <= params.max_frac:
            return mask
    raise RuntimeError(f"could not draw a region with area in [{params.min_frac}, {params.max_frac}]")


def generate_forgery(
    base: Sample,
    donor: Sample,
    rng: np.random.Generator,
    params: ForgeryParams = ForgeryParams(),
) -> Sample:
    if base.image.shape != donor.image.shape:
        raise ValueError(f"base {base.image.shape} and donor {donor.image.shape} sizes differ")
    if base.label != REAL or donor.label != REAL:
        raise ValueError("forgeries are built from two real samples")
    size = base.image.shape[0]
    mask = sample_region(rng, size, params)
    content = donor.image
    if params.donor_smoothing > 0:
        content = ndimage.gaussian_filter(content, sigma=(params.donor_smoothing, params.donor_smoothing, 0))
    if params.checker_amplitude > 0:
        yy, xx = np.mgrid[0:size, 0:size]
        checker = np.where((yy + xx) % 2 == 0, 1.0, -1.0)[..., None]
        content = content + params.checker_amplitude * checker
    if params.blend_width > 0:
        alpha = np.clip(ndimage.distance_transform_edt(mask) / params.blend_width, 0.0, 1.0)
    else:
        alpha = mask.astype(np.float64)
    alpha = alpha[..., None]
    forged = _quantize(base.image * (1 - alpha) + content * alpha)
    # every pasted pixel must differ from the base so the mask is exact
    inside = mask.astype(bool)
    same = inside & np.all(forged == base.image, axis=-1)
    if same.any():
        step = np.float32(1.0 / 255.0)
        ch0 = forged[..., 0]
        ch0[same] = np.where(ch0[same] < 0.5, ch0[same] + step, ch0[same] - step)
    forged[~inside] = base.image[~inside]
    return Sample(forged, FAKE, mask, base.domain_tag)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


def _to_pil(img: np.ndarray) -> Image.Image:
    return Image.fromarray(np.round(img * 255).astype(np.uint8), "RGB")


def _from_pil(im: Image.Image) -> np.ndarray:
    return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def domain_shift(sample: Sample, kind: str, severity: float) -> Sample:
    """Degrade the image; label and mask are carried over unchanged.

    ``jpeg``: JPEG round trip at quality ``100 / 2**severity``;
    ``blur``: gaussian blur with sigma ``0.5 * severity``;
    ``resize``: downsample by ``1 + severity`` and back, then requantize to
    ``256 / 2**severity`` grey levels.
    """
    if kind not in SHIFT_KINDS:
        raise ValueError(f"unknown domain shift {kind!r}; expected one of {SHIFT_KINDS}")
    if severity < 0:
        raise ValueError("severity must be >= 0")
    if severity == 0:
        return replace(sample, image=sample.image.copy())
    img = sample.image
    if kind == "jpeg":
        buf = io.BytesIO()
        _to_pil(img).save(buf, "JPEG", quality=max(1, int(round(100 / 2**severity))))
        out = _from_pil(Image.open(buf))
    elif kind == "blur":
        out = ndimage.gaussian_filter(img, sigma=(0.5 * severity, 0.5 * severity, 0))
    else:
        h, w = img.shape[:2]
        factor = 1 + severity
        small = _to_pil(img).resize((max(1, int(w / factor)), max(1, int(h / factor))), Image.BILINEAR)
        out = _from_pil(small.resize((w, h), Image.BILINEAR))
        levels = max(2, int(256 / 2**severity))
        out = np.round(out * (levels - 1)) / (levels - 1)
    tag = f"{sample.domain_tag}+{kind}{severity:g}" if sample.domain_tag else f"{kind}{severity:g}"
    return Sample(_quantize(out), sample.label, sample.mask.copy(), tag)


# -- manifests ---------------------------------------------------------------


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    label: int
    mask_path: str
    domain_tag: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = "train"
    root: Path | None = None  # directory relative paths resolve against

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def validate(self) -> None:
        missing = [
            str(self.resolve(p))
            for e in self.entries
            for p in (e.image_path, e.mask_path)
            if not self.resolve(p).is_file()
        ]
        if missing:
            raise FileNotFoundError(f"{len(missing)} manifest paths do not resolve, e.g. {missing[0]}")

    def __len__(self) -> int:
        return len(self.entries)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [f"# split: {manifest.split}"]
    for e in manifest.entries:
        lines.append("\t".join((e.image_path, LABEL_NAMES[e.label], e.mask_path, e.domain_tag)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse ``image_path<TAB>label<TAB>mask_path<TAB>domain_tag`` lines.
    ``#`` lines are comments; ``# split: NAME`` sets the split."""
    path = Path(path)
    split = "train"
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("split:"):
                    split = body.split(":", 1)[1].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            image, label, mask, tag = parts
            if label not in LABEL_CODES:
                raise ManifestError(f"{path}:{lineno}: label must be 'real' or 'fake', got {label!r}")
            entries.append(ManifestEntry(image, LABEL_CODES[label], mask, tag))
    return DatasetManifest(entries, split, path.parent)


# -- image files ------------------------------------------------------------


def save_sample(sample: Sample, image_path: Path, mask_path: Path) -> None:
    _to_pil(sample.image).save(image_path)
    Image.fromarray(sample.mask * 255, "L").save(mask_path)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return _from_pil(im)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def load_samples(manifest: DatasetManifest) -> list[Sample]:
    return [
        Sample(load_image(manifest.resolve(e.image_path)), e.label, load_mask(manifest.resolve(e.mask_path)), e.domain_tag)
        for e in manifest.entries
    ]


# -- dataset generation -----------------------------------------------------


def sample_rng(seed: int, split_index: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, split_index, index]))


def make_sample(seed: int, split_index: int, index: int, size: int, params: ForgeryParams = ForgeryParams()) -> Sample:
    """Even indices are real, odd indices fake; fully determined by the arguments."""
    rng = sample_rng(seed, split_index, index)
    base = generate_pristine(rng, size)
    if index % 2 == 0:
        return base
    donor = generate_pristine(rng, size)
    return generate_forgery(base, donor, rng, params)


def generate_dataset(
    out_dir: str | Path,
    seed: int = 0,
    size: int = 64,
    counts: tuple[int, int, int] = (200, 50, 100),
    shifted: bool = True,
    shift_kind: str = "jpeg",
    shift_severity: float = 2,
    workers: int = 1,
) -> dict[str, Path]:
    """Write images, masks and one manifest per split under ``out_dir``.

    Returns ``{split: manifest_path}``; with ``shifted`` also ``test_shifted``,
    a degraded copy of the test split.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    manifests: dict[str, Path] = {}

    def build(split_index: int, split: str, i: int) -> tuple[ManifestEntry, Sample]:
        sample = make_sample(seed, split_index, i, size)
        name = f"{split}_{i:05d}.png"
        save_sample(sample, out / "images" / name, out / "masks" / name)
        return ManifestEntry(f"images/{name}", sample.label, f"masks/{name}", sample.domain_tag), sample

    test_samples: list[Sample] = []
    for split_index, (split, n) in enumerate(zip(SPLITS, counts)):
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(lambda i: build(split_index, split, i), range(n)))
        manifest = DatasetManifest([r[0] for r in results], split, out)
        manifests[split] = out / f"{split}.tsv"
        write_manifest(manifest, manifests[split])
        if split == "test":
            test_samples = [r[1] for r in results]
        logger.info("wrote %d %s samples", n, split)

    if shifted:
        entries = []
        for i, sample in enumerate(test_samples):
            degraded = domain_shift(sample, shift_kind, shift_severity)
            name = f"test_shifted_{i:05d}.png"
            _to_pil(degraded.image).save(out / "images" / name)
            entries.append(ManifestEntry(f"images/{name}", degraded.label, f"masks/test_{i:05d}.png", degraded.domain_tag))
        manifests["test_shifted"] = out / "test_shifted.tsv"
        write_manifest(DatasetManifest(entries, "test", out), manifests["test_shifted"])
    return manifests
