"""Reading storage, ellipse-to-target conversion, and synthetic data.

A dataset root looks like:

    root/
      manifest.json            {"readings": [{"id": "...", "split": "train"}, ...]}
      readings/<id>/
        image.pgm              binary P5, 8-bit
        annotations.json       [{"cx","cy","rx","ry","label"}, ...]
        gaze.csv               raw gaze stream (optional if fixations.csv exists)
        fixations.csv          precomputed fixations (takes precedence)

The synthetic generator plants bright elliptical lesions with per-class
intensity/size priors on a dark background, a gaze stream that dwells near
each lesion plus an off-lesion distractor dwell, and exact ellipse ground
truth. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import gaze as gz


class ClassLabel(IntEnum):
    ENLARGED_CARDIAC_SILHOUETTE = 0
    ATELECTASIS = 1
    PLEURAL_ABNORMALITY = 2
    CONSOLIDATION = 3
    PULMONARY_EDEMA = 4


CLASS_NAMES = {
    ClassLabel.ENLARGED_CARDIAC_SILHOUETTE: "EnlargedCardiacSilhouette",
    ClassLabel.ATELECTASIS: "Atelectasis",
    ClassLabel.PLEURAL_ABNORMALITY: "PleuralAbnormality",
    ClassLabel.CONSOLIDATION: "Consolidation",
    ClassLabel.PULMONARY_EDEMA: "PulmonaryEdema",
}
NAME_TO_CLASS = {v: k for k, v in CLASS_NAMES.items()}

REPORT_CLASS_TITLES = {
    ClassLabel.ENLARGED_CARDIAC_SILHOUETTE: "Enlarged Cardiac Silhouette",
    ClassLabel.ATELECTASIS: "Atelectasis",
    ClassLabel.PLEURAL_ABNORMALITY: "Pleural abnormality",
    ClassLabel.CONSOLIDATION: "Consolidation",
    ClassLabel.PULMONARY_EDEMA: "Pulmonary edema",
}


@dataclass(frozen=True)
class EllipseAnnotation:
    cx: float
    cy: float
    rx: float
    ry: float
    label: ClassLabel

    def __post_init__(self):
        if self.rx <= 0 or self.ry <= 0:
            raise ValueError(f"ellipse radii must be positive, got ({self.rx}, {self.ry})")


@dataclass(frozen=True)
class TargetBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: ClassLabel
    mask: np.ndarray  # (H, W) uint8, 1 on the ellipse interior

    @property
    def xyxy(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])


@dataclass
class Reading:
    id: str
    image: np.ndarray  # (H, W) floats in [0, 1]
    gaze: list[gz.GazeSample] = field(default_factory=list)
    fixations: list[gz.Fixation] | None = None
    annotations: list[EllipseAnnotation] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def ellipse_to_target(e: EllipseAnnotation, img_w: int, img_h: int) -> TargetBox:
    """Axis-aligned extent box plus a pixel-center rasterized interior mask."""
    x0, x1 = e.cx - e.rx, e.cx + e.rx
    y0, y1 = e.cy - e.ry, e.cy + e.ry
    if x1 <= 0 or y1 <= 0 or x0 >= img_w or y0 >= img_h:
        raise ValueError(f"ellipse at ({e.cx}, {e.cy}) lies entirely outside {img_w}x{img_h}")
    xs = (np.arange(img_w) + 0.5 - e.cx) / e.rx
    ys = (np.arange(img_h) + 0.5 - e.cy) / e.ry
    mask = (xs[None, :] ** 2 + ys[:, None] ** 2 <= 1.0).astype(np.uint8)
    return TargetBox(
        x_min=max(0.0, x0),
        y_min=max(0.0, y0),
        x_max=min(float(img_w), x1),
        y_max=min(float(img_h), y1),
        label=e.label,
        mask=mask,
    )


def reading_targets(reading: Reading) -> list[TargetBox]:
    return [ellipse_to_target(a, reading.width, reading.height) for a in reading.annotations]


# ---------------------------------------------------------------------------
# disk I/O


def _annotation_from_json(obj: dict, where: str) -> EllipseAnnotation:
    try:
        label = NAME_TO_CLASS[obj["label"]]
        return EllipseAnnotation(
            cx=float(obj["cx"]), cy=float(obj["cy"]),
            rx=float(obj["rx"]), ry=float(obj["ry"]), label=label,
        )
    except KeyError as exc:
        raise ValueError(f"{where}: unknown or missing field/label {exc}") from exc


def load_reading(path: str) -> Reading:
    """Load one reading directory; fixations.csv wins over gaze.csv."""
    img_path = os.path.join(path, "image.pgm")
    ann_path = os.path.join(path, "annotations.json")
    if not os.path.exists(img_path):
        raise FileNotFoundError(f"missing {img_path}")
    if not os.path.exists(ann_path):
        raise FileNotFoundError(f"missing {ann_path}")
    image = gz.read_pgm(img_path)
    with open(ann_path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{ann_path}: expected a JSON array")
    annotations = [
        _annotation_from_json(obj, f"{ann_path}[{i}]") for i, obj in enumerate(raw)
    ]
    h, w = image.shape
    for i, a in enumerate(annotations):
        # reject only fully out-of-frame geometry; partial overlap clamps later
        if a.cx + a.rx <= 0 or a.cy + a.ry <= 0 or a.cx - a.rx >= w or a.cy - a.ry >= h:
            raise ValueError(f"{ann_path}[{i}]: ellipse outside the image")

    gaze_path = os.path.join(path, "gaze.csv")
    fix_path = os.path.join(path, "fixations.csv")
    samples: list[gz.GazeSample] = []
    fixations = None
    if os.path.exists(fix_path):
        fixations = gz.read_fixation_csv(fix_path)
    if os.path.exists(gaze_path):
        samples = gz.read_gaze_csv(gaze_path)
    if fixations is None and not os.path.exists(gaze_path):
        raise FileNotFoundError(f"{path}: needs gaze.csv or fixations.csv")
    return Reading(
        id=os.path.basename(os.path.normpath(path)),
        image=image,
        gaze=samples,
        fixations=fixations,
        annotations=annotations,
    )


def save_reading(root: str, reading: Reading) -> str:
    rdir = os.path.join(root, "readings", reading.id)
    os.makedirs(rdir, exist_ok=True)
    gz.write_pgm(os.path.join(rdir, "image.pgm"), reading.image)
    ann = [
        {"cx": a.cx, "cy": a.cy, "rx": a.rx, "ry": a.ry, "label": CLASS_NAMES[a.label]}
        for a in reading.annotations
    ]
    gz._atomic_write_text(os.path.join(rdir, "annotations.json"), json.dumps(ann, indent=1) + "\n")
    gz.write_gaze_csv(os.path.join(rdir, "gaze.csv"), reading.gaze)
    if reading.fixations is not None:
        gz.write_fixation_csv(os.path.join(rdir, "fixations.csv"), reading.fixations)
    return rdir


def save_dataset(root: str, readings: list[Reading], splits: dict[str, str] | None = None) -> None:
    """Write all readings, then the manifest last as the atomicity marker."""
    os.makedirs(root, exist_ok=True)
    for r in readings:
        save_reading(root, r)
    manifest = {
        "readings": [
            {"id": r.id, "split": (splits or {}).get(r.id, "train")} for r in readings
        ]
    }
    gz._atomic_write_text(
        os.path.join(root, "manifest.json"), json.dumps(manifest, indent=1) + "\n"
    )


def load_dataset(root: str, split: str | None = None) -> list[Reading]:
    man_path = os.path.join(root, "manifest.json")
    with open(man_path) as fh:
        manifest = json.load(fh)
    readings = []
    for entry in manifest["readings"]:
        if split is not None and entry.get("split") != split:
            continue
        readings.append(load_reading(os.path.join(root, "readings", entry["id"])))
    return readings


def dataset_splits(root: str) -> dict[str, list[str]]:
    with open(os.path.join(root, "manifest.json")) as fh:
        manifest = json.load(fh)
    out: dict[str, list[str]] = {}
    for entry in manifest["readings"]:
        out.setdefault(entry.get("split", "train"), []).append(entry["id"])
    return out


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SynthConfig:
    n_readings: int = 200
    img_size: int = 64
    classes: tuple[ClassLabel, ...] = (
        ClassLabel.ENLARGED_CARDIAC_SILHOUETTE,
        ClassLabel.ATELECTASIS,
    )
    lesions_min: int = 1
    lesions_max: int = 2
    # per-sample dwell jitter at img_size 64; scaled with img_size so the
    # jitter-to-dispersion-threshold ratio (and hence fixation detection
    # behavior) is the same at every image size
    gaze_noise_px: float = 0.5
    background: float = 0.05

    def __post_init__(self):
        if self.img_size < 32:
            raise ValueError(f"img_size must be >= 32, got {self.img_size}")
        if not 0 <= self.lesions_min <= self.lesions_max:
            raise ValueError("bad lesions-per-image range")
        if self.n_readings < 0:
            raise ValueError("n_readings must be non-negative")


# per-class (intensity, min radius, max radius) priors at img_size 64;
# radii scale with image size, intensities chosen for clear separability
_CLASS_PRIORS = {
    ClassLabel.ENLARGED_CARDIAC_SILHOUETTE: (0.95, 9.0, 13.0),
    ClassLabel.ATELECTASIS: (0.55, 4.0, 6.5),
    ClassLabel.PLEURAL_ABNORMALITY: (0.75, 6.0, 9.0),
    ClassLabel.CONSOLIDATION: (0.40, 7.0, 10.0),
    ClassLabel.PULMONARY_EDEMA: (0.85, 4.5, 7.0),
}

_DWELL_MS = 600.0
_DT_MS = 10.0


def _plant_lesions(rng: np.random.Generator, cfg: SynthConfig) -> list[EllipseAnnotation]:
    scale = cfg.img_size / 64.0
    n = int(rng.integers(cfg.lesions_min, cfg.lesions_max + 1))
    placed: list[EllipseAnnotation] = []
    for _ in range(n):
        label = cfg.classes[int(rng.integers(len(cfg.classes)))]
        _, rmin, rmax = _CLASS_PRIORS[label]
        for _attempt in range(30):
            rx = float(rng.uniform(rmin, rmax)) * scale
            ry = float(rng.uniform(rmin, rmax)) * scale
            cx = float(rng.uniform(rx + 1, cfg.img_size - rx - 1))
            cy = float(rng.uniform(ry + 1, cfg.img_size - ry - 1))
            ok = all(
                np.hypot(cx - p.cx, cy - p.cy) > (max(rx, ry) + max(p.rx, p.ry) + 2)
                for p in placed
            )
            if ok:
                placed.append(EllipseAnnotation(cx, cy, rx, ry, label))
                break
    return placed


def _render_image(rng: np.random.Generator, cfg: SynthConfig,
                  lesions: list[EllipseAnnotation]) -> np.ndarray:
    img = cfg.background + rng.uniform(0.0, 0.04, size=(cfg.img_size, cfg.img_size))
    for e in lesions:
        intensity, _, _ = _CLASS_PRIORS[e.label]
        tgt = ellipse_to_target(e, cfg.img_size, cfg.img_size)
        img = np.where(tgt.mask.astype(bool), intensity, img)
    return np.clip(img, 0.0, 1.0)


def _dwell(rng, t0: float, cx: float, cy: float, noise: float, n: int) -> list[gz.GazeSample]:
    out = []
    for k in range(n):
        out.append(
            gz.GazeSample(
                t_ms=t0 + k * _DT_MS,
                x_px=cx + float(rng.normal(0, noise)),
                y_px=cy + float(rng.normal(0, noise)),
                pupil_mm=float(rng.uniform(2.5, 4.5)),
                valid=True,
            )
        )
    return out


def _saccade(rng, t0: float, a: tuple, b: tuple, n: int = 4) -> list[gz.GazeSample]:
    out = []
    for k in range(n):
        f = (k + 1) / (n + 1)
        out.append(
            gz.GazeSample(
                t_ms=t0 + k * _DT_MS,
                x_px=a[0] + f * (b[0] - a[0]),
                y_px=a[1] + f * (b[1] - a[1]),
                pupil_mm=None,
                valid=True,
            )
        )
    return out


def _synth_gaze(rng, cfg: SynthConfig, lesions: list[EllipseAnnotation]) -> list[gz.GazeSample]:
    n_dwell = int(_DWELL_MS / _DT_MS)
    stops: list[tuple[float, float]] = [(e.cx, e.cy) for e in lesions]
    # one distractor dwell away from every lesion, mimicking interface noise
    for _ in range(30):
        dx = float(rng.uniform(4, cfg.img_size - 4))
        dy = float(rng.uniform(4, cfg.img_size - 4))
        if all(np.hypot(dx - e.cx, dy - e.cy) > max(e.rx, e.ry) + 4 for e in lesions):
            stops.append((dx, dy))
            break
    samples: list[gz.GazeSample] = []
    t = 0.0
    pos = (cfg.img_size / 2.0, cfg.img_size / 2.0)
    for stop in stops:
        sweep = _saccade(rng, t, pos, stop)
        samples.extend(sweep)
        t = sweep[-1].t_ms + _DT_MS
        noise = cfg.gaze_noise_px * cfg.img_size / 64.0
        dwell = _dwell(rng, t, stop[0], stop[1], noise, n_dwell)
        samples.extend(dwell)
        t = dwell[-1].t_ms + _DT_MS
        pos = stop
    # sprinkle tracker dropouts and off-screen glances that filtering removes
    samples.append(gz.GazeSample(t, -500.0, -500.0, None, valid=True))
    samples.append(gz.GazeSample(t + _DT_MS, 0.0, 0.0, None, valid=False))
    return samples


def synth_generate(config: SynthConfig, seed: int) -> list[Reading]:
    """Generate readings with exact ellipse ground truth; deterministic per seed."""
    readings = []
    for idx in range(config.n_readings):
        rng = np.random.default_rng([seed, idx])
        lesions = _plant_lesions(rng, config)
        image = _render_image(rng, config, lesions)
        samples = _synth_gaze(rng, config, lesions)
        readings.append(
            Reading(id=f"r{idx:04d}", image=image, gaze=samples, annotations=lesions)
        )
    return readings


def split(
    readings: list[Reading], ratios: tuple[float, float, float], seed: int
) -> tuple[list[Reading], list[Reading], list[Reading]]:
    """Deterministic shuffled partition into train/val/test."""
    if not readings:
        raise ValueError("cannot split an empty reading list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(readings))
    n = len(readings)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    shuffled = [readings[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :]
