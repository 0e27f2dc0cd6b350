"""Procedural AS-OCT-like image generator with exact ground truth.

Left-oriented geometry: a bright corneal band between two quartic arcs, and
an iris band leaving the scleral spur toward the image center.  The aperture
angle between the iris upper surface and the corneal bottom tangent at the
spur is the controlled quantity; the class label is a pure threshold on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import Manifest, PixelPoint, SampleRecord, write_image, write_manifest

CLOSURE_ANGLE_DEG = 6.0

DEFAULT_PARAM_RANGES: dict[str, tuple[float, float]] = {
    "apex_u": (120.0, 160.0),
    "apex_v": (400.0, 460.0),
    "c2": (0.0008, 0.0016),
    "c4": (1e-10, 5e-10),
    "cornea_thickness": (25.0, 40.0),
    "spur_v": (150.0, 240.0),
    "angle_closure": (1.0, 5.0),
    "angle_open": (12.0, 35.0),
    "iris_thickness": (30.0, 50.0),
    "pupil_gap": (40.0, 80.0),
    "speckle": (0.05, 0.12),
    "gain": (0.85, 1.10),
}


@dataclass(frozen=True)
class SynthParams:
    """Geometry and rendering knobs for one sample."""

    apex_u: float = 140.0
    apex_v: float = 430.0
    c2: float = 0.0012
    c4: float = 3e-10
    cornea_thickness: float = 32.0
    spur_v: float = 190.0
    angle_deg: float = 20.0
    iris_thickness: float = 40.0
    pupil_gap: float = 60.0
    height: int = 400
    width: int = 600
    cornea_intensity: float = 0.8
    iris_intensity: float = 0.7
    background: float = 0.02
    speckle: float = 0.0
    gain: float = 1.0
    seed: int = 0

    def bottom_arc(self, v) -> np.ndarray:
        dv = np.asarray(v, dtype=np.float64) - self.apex_v
        return self.apex_u + self.c2 * dv * dv + self.c4 * dv**4

    @property
    def spur_u(self) -> float:
        return float(self.bottom_arc(self.spur_v))

    @property
    def label(self) -> str:
        return "closure" if self.angle_deg < CLOSURE_ANGLE_DEG else "open"

    def __post_init__(self):
        if self.angle_deg < 0:
            raise ValueError("angle_deg must be non-negative")
        if self.c2 <= 0 or self.c4 < 0:
            raise ValueError("arc must open downward (c2 > 0, c4 >= 0)")
        if not (130 <= self.spur_v < self.apex_v):
            raise ValueError("spur must sit >= 130 px from the left edge and left of the apex")
        if self.spur_u > self.height - 130:
            raise ValueError("spur must sit >= 130 px from the bottom edge")
        if self.spur_u - self.cornea_thickness < 0:
            raise ValueError("corneal band exits the canvas top at the spur")
        if self.apex_v - self.pupil_gap <= self.spur_v:
            raise ValueError("iris extent is empty (pupil gap reaches the spur)")


def _iris_top(params: SynthParams, v: np.ndarray) -> np.ndarray:
    """Upper iris edge: spur tangent rotated down by angle_deg, plus droop.

    The quadratic droop coefficient exceeds the arc curvature bound, so the
    iris-cornea separation is strictly increasing right of the spur and the
    spur stays the unique contact point.
    """
    dv_s = params.spur_v - params.apex_v
    tangent = 2 * params.c2 * dv_s + 4 * params.c4 * dv_s**3
    slope = math.tan(math.atan(tangent) + math.radians(params.angle_deg))
    droop = params.c2 + 6 * params.c4 * params.width**2 + 5e-4
    dv = np.asarray(v, dtype=np.float64) - params.spur_v
    return params.spur_u + slope * dv + droop * dv * dv


def _band_coverage(h: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-pixel coverage of the vertical band [lo, hi) in each column."""
    rows = np.arange(h, dtype=np.float64)[:, None]
    return np.clip(np.minimum(hi, rows + 0.5) - np.maximum(lo, rows - 0.5), 0.0, 1.0)


def render(params: SynthParams) -> np.ndarray:
    """Noiseless left-oriented rendering; bands composited by maximum."""
    H, W = params.height, params.width
    v = np.arange(W, dtype=np.float64)
    u_b = params.bottom_arc(v)
    cornea = _band_coverage(H, u_b - params.cornea_thickness, u_b) * params.cornea_intensity

    top = _iris_top(params, v)
    v_end = params.apex_v - params.pupil_gap
    inside = (v >= params.spur_v) & (v <= v_end)
    sep = top - u_b
    if np.any(inside & (v > params.spur_v) & (sep <= 0)):
        raise ValueError("iris re-crosses the corneal arc right of the spur")
    lo = np.where(inside, top, 0.0)
    hi = np.where(inside, top + params.iris_thickness, 0.0)
    iris = _band_coverage(H, lo, hi) * params.iris_intensity

    return np.maximum(np.maximum(cornea, iris), params.background)


def generate_sample(
    params: SynthParams,
    image_path: str = "sample.pgm",
    patient_id: str = "p0000",
    side: str = "left",
) -> tuple[np.ndarray, SampleRecord]:
    """Render one sample with speckle and gain; right-side output is mirrored."""
    img = render(params)
    rng = np.random.default_rng(params.seed)
    if params.speckle > 0:
        img = img * (1.0 + params.speckle * rng.standard_normal(img.shape))
    img = np.clip(img * params.gain, 0.0, 1.0)
    ss_v = int(round(params.spur_v))
    if side == "right":
        img = np.ascontiguousarray(img[:, ::-1])
        ss_v = params.width - 1 - ss_v
    record = SampleRecord(
        image_path=image_path,
        patient_id=patient_id,
        side=side,
        label=params.label,
        ss_truth=PixelPoint(int(round(params.spur_u)), ss_v),
    )
    return img, record


def _draw_params(rng: np.random.Generator, ranges: dict, closure: bool) -> SynthParams:
    """Rejection-sample a valid geometry; the draw order is fixed."""
    angle_key = "angle_closure" if closure else "angle_open"
    for _ in range(200):
        vals = {}
        for key in (
            "apex_u",
            "apex_v",
            "c2",
            "c4",
            "cornea_thickness",
            "spur_v",
            angle_key,
            "iris_thickness",
            "pupil_gap",
            "speckle",
            "gain",
        ):
            lo, hi = ranges[key]
            vals[key] = float(rng.uniform(lo, hi))
        vals["angle_deg"] = vals.pop(angle_key)
        seed = int(rng.integers(0, 2**63))
        try:
            return SynthParams(seed=seed, **vals)
        except ValueError:
            continue
    raise ValueError("could not draw a valid geometry from the given ranges")


def generate_dataset(
    n: int,
    out_dir,
    class_balance: float = 0.5,
    param_ranges: dict | None = None,
    seed: int = 0,
) -> Manifest:
    """Write n samples plus manifest.jsonl; patients are pairs of samples."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0.0 <= class_balance <= 1.0:
        raise ValueError("class_balance must be in [0, 1]")
    ranges = dict(DEFAULT_PARAM_RANGES)
    if param_ranges:
        ranges.update(param_ranges)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    n_closure = int(round(n * class_balance))
    labels = np.array([True] * n_closure + [False] * (n - n_closure))
    rng.shuffle(labels)

    records = []
    for i, closure in enumerate(labels):
        params = _draw_params(rng, ranges, bool(closure))
        name = f"img_{i:04d}.pgm"
        img, record = generate_sample(
            params,
            image_path=name,
            patient_id=f"p{i // 2:04d}",
            side="left" if i % 2 == 0 else "right",
        )
        write_image(img, out / name)
        records.append(record)

    manifest = Manifest(records=tuple(records))
    header = "\n".join(
        [
            f"generator seed={seed} n={n} class_balance={class_balance}",
            f"closure rule: label=closure iff aperture angle < {CLOSURE_ANGLE_DEG} deg",
            "canvas 400x600; right-side samples stored mirrored (ss_u/ss_v in stored coords)",
        ]
    )
    write_manifest(manifest, out / "manifest.jsonl", header=header)
    return manifest
