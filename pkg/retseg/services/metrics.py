"""
Pixel-level segmentation metrics and model evaluation.

Vessels are the positive class and only pixels inside the field of view
are counted unless asked otherwise. Probabilities are binarized with
``p >= threshold``.
"""

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
import torch.nn as nn
from sklearn.metrics import roc_auc_score

from retseg.ai.saunet import forward
from retseg.models.report import ConfusionCounts, MetricsReport
from retseg.models.sample import DatasetManifest
from retseg.utilities.exceptions import DataError, EmptyFOVError, UndefinedMetricError
from retseg.utilities.validators import validate_binary, validate_same_shape

logger = structlog.get_logger(__name__)

Predictor = Union[nn.Module, Callable[[torch.Tensor], torch.Tensor]]


def binarize(probability: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Ties count as vessel."""
    return (np.asarray(probability) >= threshold).astype(np.uint8)


def _fov(fov_mask: Optional[np.ndarray], shape: Tuple[int, ...]) -> np.ndarray:
    if fov_mask is None:
        return np.ones(shape, dtype=bool)
    return validate_binary(fov_mask, 'fov_mask').astype(bool)


def confusion(pred_binary: np.ndarray, gt_binary: np.ndarray, fov_mask: Optional[np.ndarray] = None) -> ConfusionCounts:
    """
    Count TP/FP/FN/TN inside the field of view.

    Raises:
        ValidationError: If inputs are not binary or shapes differ
    """
    shape = validate_same_shape(pred_binary, gt_binary, fov_mask, names=('pred', 'gt', 'fov_mask'))
    pred = validate_binary(pred_binary, 'pred').astype(bool)
    gt = validate_binary(gt_binary, 'gt').astype(bool)
    inside = _fov(fov_mask, shape)
    pred, gt = pred[inside], gt[inside]
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
    )


def scalar_metrics(counts: ConfusionCounts) -> dict:
    """
    SE, SP, ACC, precision and F1 from confusion counts.

    Precision with no predicted positives is 0; F1 uses 2tp / (2tp + fp + fn),
    which equals 2 * PR * SE / (PR + SE) and is 0 when both are 0.

    Raises:
        EmptyFOVError: If all counts are zero
        UndefinedMetricError: If there are no positive or no negative pixels
    """
    if counts.total == 0:
        raise EmptyFOVError()
    if counts.positives == 0:
        raise UndefinedMetricError('se', "Sensitivity is undefined without vessel pixels")
    if counts.negatives == 0:
        raise UndefinedMetricError('sp', "Specificity is undefined without background pixels")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    return {
        'se': tp / (tp + fn),
        'sp': tn / (tn + fp),
        'acc': (tp + tn) / counts.total,
        'precision': tp / (tp + fp) if tp + fp else 0.0,
        'f1': 2 * tp / (2 * tp + fp + fn),
    }


def roc_auc(pred_prob: np.ndarray, gt_binary: np.ndarray, fov_mask: Optional[np.ndarray] = None) -> float:
    """
    Area under the ROC curve over FOV pixels (Mann-Whitney, ties count one half).

    Raises:
        UndefinedMetricError: If the FOV has no positive or no negative pixel
    """
    shape = validate_same_shape(pred_prob, gt_binary, fov_mask, names=('pred_prob', 'gt', 'fov_mask'))
    inside = _fov(fov_mask, shape)
    scores = np.asarray(pred_prob, dtype=np.float64)[inside]
    labels = validate_binary(gt_binary, 'gt')[inside]
    return _auc(scores, labels)


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    positives = int(np.count_nonzero(labels))
    if positives == 0 or positives == labels.size:
        raise UndefinedMetricError('auc', "AUC needs both vessel and background pixels")
    return float(roc_auc_score(labels, scores))


def build_report(counts: ConfusionCounts, auc: float, n_images: int, threshold: float,
                 method: str = 'model') -> MetricsReport:
    return MetricsReport(counts=counts, auc=auc, n_images=n_images, threshold=threshold,
                         method=method, **scalar_metrics(counts))


def as_predictor(predictor: Predictor) -> Callable[[torch.Tensor], torch.Tensor]:
    """Wrap networks so they run in eval mode without gradients; other callables pass through."""
    if isinstance(predictor, nn.Module):
        def run(batch: torch.Tensor) -> torch.Tensor:
            return forward(predictor, batch, training=False)
        return run
    return predictor


def predict_manifest(predictor: Predictor, manifest: DatasetManifest, batch_size: int = 2) -> List[np.ndarray]:
    """H x W probability map per sample, in manifest order."""
    run = as_predictor(predictor)
    outputs: List[np.ndarray] = []
    samples = manifest.samples
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = torch.stack([torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1))) for s in chunk])
        device = _device_of(predictor)
        with torch.no_grad():
            probs = run(batch.to(device)).detach().cpu().numpy()
        outputs.extend(p[0].astype(np.float32) for p in probs)
    return outputs


def _device_of(predictor: Predictor) -> torch.device:
    if isinstance(predictor, nn.Module):
        for parameter in predictor.parameters():
            return parameter.device
    return torch.device('cpu')


def evaluate_probabilities(
    probabilities: Sequence[np.ndarray],
    manifest: DatasetManifest,
    threshold: float = 0.5,
    use_fov: bool = True,
    method: str = 'model',
) -> MetricsReport:
    """Micro-averaged report: counts and AUC pooled over every image's pixels."""
    counts = ConfusionCounts()
    scores, labels = [], []
    for prob, sample in zip(probabilities, manifest):
        if not sample.is_labeled:
            raise DataError(f"Sample {sample.id} has no vessel label", sample_id=sample.id,
                            error_code='UNLABELED_SAMPLE')
        fov = sample.fov_mask if use_fov else None
        counts = counts + confusion(binarize(prob, threshold), sample.vessel_mask, fov)
        inside = _fov(fov, sample.shape)
        scores.append(np.asarray(prob, dtype=np.float64)[inside])
        labels.append(sample.vessel_mask[inside])
    auc = _auc(np.concatenate(scores), np.concatenate(labels))
    return build_report(counts, auc, len(manifest), threshold, method)


def evaluate_model(
    predictor: Predictor,
    test: DatasetManifest,
    threshold: float = 0.5,
    use_fov: bool = True,
    batch_size: int = 2,
    method: str = 'model',
) -> MetricsReport:
    """
    Evaluate a network, an ensemble or any batch -> probability callable.

    Raises:
        DataError: If a test sample is unlabeled
    """
    for sample in test:
        if not sample.is_labeled:
            raise DataError(f"Sample {sample.id} has no vessel label", sample_id=sample.id,
                            error_code='UNLABELED_SAMPLE')
    probabilities = predict_manifest(predictor, test, batch_size)
    report = evaluate_probabilities(probabilities, test, threshold, use_fov, method)
    logger.debug('model_evaluated', method=method, f1=report.f1, auc=report.auc, images=report.n_images)
    return report


def dice_score(pred_binary: np.ndarray, gt_binary: np.ndarray) -> float:
    """Hard Dice over all pixels; 1.0 when both masks are empty."""
    pred = np.asarray(pred_binary, dtype=bool)
    gt = np.asarray(gt_binary, dtype=bool)
    denominator = pred.sum() + gt.sum()
    if denominator == 0:
        return 1.0
    return float(2.0 * np.count_nonzero(pred & gt) / denominator)
