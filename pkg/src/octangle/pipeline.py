"""End-to-end orchestration shared by the CLI and the benchmark tests.

Chain: load sample (left-oriented) -> denoise -> vertical gradient -> edge
pairs -> quartic boundary -> window sweep -> SVR localization -> level
extraction -> multi-level classifier -> evaluation report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .aca import ROI_SIZE, AcaDetection, detect_aca, extract_levels, make_training_windows
from .augment import IDENTITY_AUGMENT, AugmentConfig, TrainingSample, expand_training_set, scale_intensity
from .cornea import DEFAULT_OUTLIER_PASSES, DEFAULT_STRIDE, CornealBoundary, fit_corneal_boundary
from .hog import HogConfig, descriptor_dim
from .imagecore import Manifest, label_to_int, load_sample, resize_bilinear
from .mldn import MldnConfig, MldnModel, TrainBatch, build_mldn, predict_proba, train_phase1, train_phase2
from .preprocess import DEFAULT_REL_THRESHOLD, DEFAULT_SIGMA, column_edge_pairs, gaussian_smooth, vertical_gradient
from .svr import SvrModel, SvrTrainSet, svr_train


@dataclass(frozen=True)
class BoundaryParams:
    sigma: float = DEFAULT_SIGMA
    rel_threshold: float = DEFAULT_REL_THRESHOLD
    outlier_passes: int = DEFAULT_OUTLIER_PASSES


def compute_boundary(img: np.ndarray, params: BoundaryParams = BoundaryParams()) -> CornealBoundary:
    smooth = gaussian_smooth(img, sigma=params.sigma)
    grad = vertical_gradient(smooth)
    pairs = column_edge_pairs(grad, rel_threshold=params.rel_threshold)
    return fit_corneal_boundary(pairs, outlier_passes=params.outlier_passes)


def localizer_training_set(
    manifest: Manifest,
    root,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
) -> SvrTrainSet:
    """Window descriptors and distance targets pooled over all images.

    Images are loaded twice: a first pass sizes the feature matrix so the
    pooled descriptors are filled in place without a doubled peak.
    """
    plans = []
    n_rows = 0
    for record in manifest.records:
        if record.ss_truth is None:
            raise ValueError(f"{record.image_path}: localizer training needs ss_u/ss_v")
        img, ss = load_sample(record, root)
        boundary = compute_boundary(img, boundary_params)
        n = len(range(boundary.bottom.v_min, boundary.bottom.v_max + 1, stride))
        plans.append((record, boundary, n))
        n_rows += n
    features = np.empty((n_rows, descriptor_dim((ROI_SIZE, ROI_SIZE), hog_cfg)))
    targets = np.empty(n_rows)
    row = 0
    for record, boundary, n in plans:
        img, ss = load_sample(record, root)
        part = make_training_windows(img, boundary, ss, stride=stride, cfg=hog_cfg)
        features[row : row + n] = part.features
        targets[row : row + n] = part.targets
        row += n
    return SvrTrainSet(features=features, targets=targets)


def train_localizer(
    manifest: Manifest,
    root,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
    C: float = 1.0,
    eps: float = 0.1,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> SvrModel:
    # 200 descent steps land well past the plateau in window-ranking quality;
    # running to the gradient tolerance costs minutes more for no ranking change.
    train_set = localizer_training_set(manifest, root, stride, hog_cfg, boundary_params)
    return svr_train(train_set, C=C, eps=eps, tol=tol, max_iter=max_iter)


def localize_image(
    img: np.ndarray,
    model: SvrModel,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
) -> AcaDetection:
    boundary = compute_boundary(img, boundary_params)
    return detect_aca(img, boundary, model, stride=stride, cfg=hog_cfg)


def localization_results(
    manifest: Manifest,
    root,
    model: SvrModel,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
    intensity_k: float | None = None,
) -> list[dict]:
    """Per-image detection next to the manifest truth (oriented coordinates)."""
    out = []
    for record in manifest.records:
        img, ss = load_sample(record, root)
        if intensity_k is not None:
            img = scale_intensity(img, intensity_k)
        det = localize_image(img, model, stride, hog_cfg, boundary_params)
        entry = {
            "image_path": record.image_path,
            "label": record.label,
            "ss_u": det.ss_pred.u,
            "ss_v": det.ss_pred.v,
            "score": det.score,
        }
        if ss is not None:
            entry["truth_u"] = ss.u
            entry["truth_v"] = ss.v
            entry["abs_dv"] = abs(det.ss_pred.v - ss.v)
        out.append(entry)
    return out


def localization_summary(results: list[dict], tol_px: int = 10) -> dict:
    dv = [r["abs_dv"] for r in results if "abs_dv" in r]
    if not dv:
        return {"n": 0}
    dv = np.asarray(dv, dtype=np.float64)
    return {
        "n": int(dv.size),
        "within_tol": float(np.mean(dv <= tol_px)),
        "tol_px": tol_px,
        "mean_abs_dv": float(dv.mean()),
        "median_abs_dv": float(np.median(dv)),
        "max_abs_dv": float(dv.max()),
    }


def training_samples(
    manifest: Manifest,
    root,
    model: SvrModel,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
) -> list[TrainingSample]:
    """Classifier training inputs centered on the detected ACA, not the truth,
    so train and test see the same localization noise."""
    samples = []
    for record in manifest.records:
        img, _ = load_sample(record, root)
        det = localize_image(img, model, stride, hog_cfg, boundary_params)
        samples.append(
            TrainingSample(image=img, ss=det.ss_pred, label=record.label, patient_id=record.patient_id)
        )
    return samples


def _resized_level(img: np.ndarray, size: int) -> np.ndarray:
    return resize_bilinear(img, size, size)


def build_train_batch(
    samples: list[TrainingSample],
    input_size: int,
    aug_cfg: AugmentConfig = IDENTITY_AUGMENT,
    patch_size: int = ROI_SIZE,
) -> TrainBatch:
    """Expand, resize to the network input, and stack into level tensors."""
    n_out = len(samples) * aug_cfg.expansion
    glo = np.empty((n_out, 1, input_size, input_size))
    loc = np.empty_like(glo)
    aca = np.empty_like(glo)
    labels = np.empty(n_out, dtype=int)
    for i, level in enumerate(expand_training_set(samples, aug_cfg, patch_size=patch_size)):
        glo[i, 0] = _resized_level(level.level_global, input_size)
        loc[i, 0] = _resized_level(level.level_local, input_size)
        aca[i, 0] = _resized_level(level.level_patch, input_size)
        labels[i] = label_to_int(level.label)
    return TrainBatch(level_global=glo, level_local=loc, level_aca=aca, labels=labels)


def build_eval_batch(
    manifest: Manifest,
    root,
    model: SvrModel,
    input_size: int,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
    intensity_k: float | None = None,
) -> tuple[TrainBatch, list[dict]]:
    """Unaugmented level tensors for evaluation, plus per-image detections."""
    results = []
    n = len(manifest.records)
    glo = np.empty((n, 1, input_size, input_size))
    loc = np.empty_like(glo)
    aca = np.empty_like(glo)
    labels = np.empty(n, dtype=int)
    for i, record in enumerate(manifest.records):
        img, ss = load_sample(record, root)
        if intensity_k is not None:
            img = scale_intensity(img, intensity_k)
        det = localize_image(img, model, stride, hog_cfg, boundary_params)
        lv_g, lv_l, lv_a = extract_levels(img, det)
        glo[i, 0] = _resized_level(lv_g, input_size)
        loc[i, 0] = _resized_level(lv_l, input_size)
        aca[i, 0] = _resized_level(lv_a, input_size)
        labels[i] = label_to_int(record.label)
        entry = {"image_path": record.image_path, "label": record.label,
                 "ss_u": det.ss_pred.u, "ss_v": det.ss_pred.v, "score": det.score}
        if ss is not None:
            entry["truth_u"] = ss.u
            entry["truth_v"] = ss.v
            entry["abs_dv"] = abs(det.ss_pred.v - ss.v)
        results.append(entry)
    return TrainBatch(level_global=glo, level_local=loc, level_aca=aca, labels=labels), results


def train_classifier(
    batch: TrainBatch,
    config: MldnConfig,
    epochs: int,
    lr: float = 1e-4,
    momentum: float = 0.9,
    batch_size: int = 16,
    phase2_epochs: int | None = None,
    seed: int = 1,
    class_weights=None,
) -> MldnModel:
    """Two-phase fit on prepared level tensors; epochs apply per phase."""
    model = build_mldn(config)
    train_phase1(model, batch, epochs=epochs, lr=lr, momentum=momentum,
                 batch_size=batch_size, seed=seed, class_weights=class_weights)
    train_phase2(model, batch, epochs=phase2_epochs if phase2_epochs is not None else epochs,
                 lr=lr, momentum=momentum, batch_size=batch_size, seed=seed + 1,
                 class_weights=class_weights)
    return model


def classification_report(
    model: MldnModel,
    batch: TrainBatch,
    n_resamples: int = 2000,
    seed: int = 0,
) -> tuple[dict, np.ndarray]:
    scores = predict_proba(model, batch)
    return metrics.evaluation_report(scores, batch.labels, n_resamples=n_resamples, seed=seed), scores


def evaluate(
    manifest: Manifest,
    root,
    svr_model: SvrModel,
    mldn_model: MldnModel,
    stride: int = DEFAULT_STRIDE,
    hog_cfg: HogConfig = HogConfig(),
    boundary_params: BoundaryParams = BoundaryParams(),
    intensity_k: float | None = None,
    n_resamples: int = 2000,
    seed: int = 0,
) -> dict:
    """Localization summary plus classification metrics on one manifest."""
    input_size = mldn_model.config.subnet_global.input_size
    batch, results = build_eval_batch(
        manifest, root, svr_model, input_size, stride, hog_cfg, boundary_params, intensity_k
    )
    report, _ = classification_report(mldn_model, batch, n_resamples=n_resamples, seed=seed)
    return {
        "localization": localization_summary(results),
        "classification": report,
    }
