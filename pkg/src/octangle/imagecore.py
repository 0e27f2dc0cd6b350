"""Grayscale image container, coordinate conventions, file I/O and manifests.

Images are 2-D float64 arrays with intensities in [0, 1].  Coordinates are
(u, v) = (row from top, column from left).  Right-eye samples are mirrored on
disk; :func:`load_sample` flips them so every downstream stage sees the
chamber angle on the left.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

SIDES = ("left", "right")
LABELS = ("open", "closure")


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest files."""


class PixelPoint(NamedTuple):
    u: int  # row, downward
    v: int  # column, rightward


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    patient_id: str
    side: str  # "left" | "right"
    label: str  # "open" | "closure"
    ss_truth: Optional[PixelPoint] = None

    def __post_init__(self):
        if not self.patient_id:
            raise ManifestError("patient_id must be non-empty")
        if self.side not in SIDES:
            raise ManifestError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.label not in LABELS:
            raise ManifestError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...]

    def __post_init__(self):
        paths = [r.image_path for r in self.records]
        if len(set(paths)) != len(paths):
            dupes = sorted({p for p in paths if paths.count(p) > 1})
            raise ManifestError(f"duplicate image_path values: {dupes}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def as_image(data) -> np.ndarray:
    """Validate and return a 2-D float64 image with intensities in [0, 1]."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def label_to_int(label: str) -> int:
    """Map class names to {0, 1}; angle-closure is the positive class."""
    return 1 if label == "closure" else 0


# ---------------------------------------------------------------------------
# image file I/O


def _read_pgm(raw: bytes, path: str) -> np.ndarray:
    # binary PGM (P5), maxval 255, '#' comments allowed in the header
    pos = 0
    fields = []
    while len(fields) < 4:
        if pos >= len(raw):
            raise ImageFormatError(f"unsupported format: truncated PGM header in {path}")
        if raw[pos : pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
            continue
        if raw[pos : pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace() and raw[end : end + 1] != b"#":
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ImageFormatError(f"unsupported format: not a binary PGM: {path}")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError(f"unsupported format: bad PGM header in {path}") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported format: PGM maxval {maxval} != 255 in {path}")
    pos += 1  # single whitespace byte after maxval
    pixels = raw[pos : pos + width * height]
    if len(pixels) < width * height:
        raise ImageFormatError(f"unsupported format: truncated PGM data in {path}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0


def _read_png(path: str) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "L":
                raise ImageFormatError(f"non-grayscale input: PNG mode {im.mode} in {path}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"unsupported format: {path}: {exc}") from None
    return arr.astype(np.float64) / 255.0


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit grayscale PNG or binary PGM, mapped linearly to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"P5":
        return _read_pgm(raw, str(path))
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(str(path))
    raise ImageFormatError(f"unsupported format: {path}")


def write_image(img: np.ndarray, path: str | Path) -> None:
    """Write an image as binary PGM (maxval 255)."""
    img = as_image(img)
    h, w = img.shape
    data = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# geometric operations


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    """Mirror columns: v -> width-1-v.  Involution, bit-exact."""
    return np.ascontiguousarray(img[:, ::-1])


def crop(img: np.ndarray, center: PixelPoint, h: int, w: int) -> np.ndarray:
    """h x w window centered on ``center``; out-of-bounds area is zero.

    The window is never shifted to stay inside the image: padding keeps the
    nominal center centered, which matters for windows swept near borders.
    """
    if h < 1 or w < 1:
        raise ValueError("crop size must be >= 1")
    H, W = img.shape
    u0 = int(center.u) - h // 2
    v0 = int(center.v) - w // 2
    out = np.zeros((h, w), dtype=np.float64)
    su0, sv0 = max(u0, 0), max(v0, 0)
    su1, sv1 = min(u0 + h, H), min(v0 + w, W)
    if su0 < su1 and sv0 < sv1:
        out[su0 - u0 : su1 - u0, sv0 - v0 : sv1 - v0] = img[su0:su1, sv0:sv1]
    return out


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling."""
    if h < 1 or w < 1:
        raise ValueError("resize target must be >= 1 in both dimensions")
    H, W = img.shape
    if (h, w) == (H, W):
        return img.copy()
    us = np.linspace(0.0, H - 1.0, h) if h > 1 else np.zeros(1)
    vs = np.linspace(0.0, W - 1.0, w) if w > 1 else np.zeros(1)
    u0 = np.minimum(np.floor(us).astype(np.intp), H - 1)
    v0 = np.minimum(np.floor(vs).astype(np.intp), W - 1)
    u1 = np.minimum(u0 + 1, H - 1)
    v1 = np.minimum(v0 + 1, W - 1)
    fu = (us - u0)[:, None]
    fv = (vs - v0)[None, :]
    top = img[np.ix_(u0, v0)] * (1 - fv) + img[np.ix_(u0, v1)] * fv
    bot = img[np.ix_(u1, v0)] * (1 - fv) + img[np.ix_(u1, v1)] * fv
    return top * (1 - fu) + bot * fu


# ---------------------------------------------------------------------------
# manifest I/O

_MANIFEST_KEYS = {"image_path", "patient_id", "side", "label", "ss_u", "ss_v"}


def _record_from_json(obj: dict, lineno: int) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: record must be a JSON object")
    unknown = set(obj) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"line {lineno}: unknown keys {sorted(unknown)}")
    try:
        ss = None
        if "ss_u" in obj or "ss_v" in obj:
            ss = PixelPoint(int(obj["ss_u"]), int(obj["ss_v"]))
        return SampleRecord(
            image_path=str(obj["image_path"]),
            patient_id=str(obj["patient_id"]),
            side=str(obj["side"]),
            label=str(obj["label"]),
            ss_truth=ss,
        )
    except (KeyError, TypeError, ValueError, ManifestError) as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None


def read_manifest(path: str | Path) -> Manifest:
    """Read a JSON-Lines manifest.  '#' comment lines and blank lines skip."""
    records: list[SampleRecord] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            rec = _record_from_json(obj, lineno)
            if rec.image_path in seen:
                raise ManifestError(
                    f"duplicate image_path {rec.image_path!r} on lines "
                    f"{seen[rec.image_path]},{lineno}"
                )
            seen[rec.image_path] = lineno
            records.append(rec)
    return Manifest(tuple(records))


def write_manifest(manifest: Manifest, path: str | Path, header: str | None = None) -> None:
    """Write a manifest as JSON Lines; optional '#'-prefixed header comment."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for rec in manifest.records:
            obj = {
                "image_path": rec.image_path,
                "patient_id": rec.patient_id,
                "side": rec.side,
                "label": rec.label,
            }
            if rec.ss_truth is not None:
                obj["ss_u"] = int(rec.ss_truth.u)
                obj["ss_v"] = int(rec.ss_truth.v)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def split_by_patient(manifest: Manifest, test_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Deterministic patient-level split into (train, test) manifests.

    All records from one patient land on the same side; patient order is
    shuffled with the given seed.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    patients = sorted({r.patient_id for r in manifest.records})
    if len(patients) < 2:
        raise ValueError("need at least 2 distinct patients to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    n_test = int(round(test_fraction * len(patients)))
    n_test = min(max(n_test, 1), len(patients) - 1)
    test_ids = {patients[i] for i in order[:n_test]}
    train = tuple(r for r in manifest.records if r.patient_id not in test_ids)
    test = tuple(r for r in manifest.records if r.patient_id in test_ids)
    return Manifest(train), Manifest(test)


def load_sample(record: SampleRecord, root: str | Path = ".") -> tuple[np.ndarray, Optional[PixelPoint]]:
    """Load a record's image in left-oriented form.

    Right-side images are stored mirrored and get flipped here, along with
    the spur ground truth, so the chamber angle always sits on the left.
    """
    path = Path(root) / record.image_path
    img = load_image(path)
    ss = record.ss_truth
    if record.side == "right":
        img = flip_horizontal(img)
        if ss is not None:
            ss = PixelPoint(ss.u, img.shape[1] - 1 - ss.v)
    if ss is not None and not (0 <= ss.u < img.shape[0] and 0 <= ss.v < img.shape[1]):
        raise ManifestError(f"ss_truth {tuple(ss)} out of bounds for {record.image_path}")
    return img, ss
