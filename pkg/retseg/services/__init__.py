"""
Services: data loading, training, evaluation, FID, ensembles and the pipeline.
"""

from retseg.services.dataset import (
    ManifestDataset,
    augment,
    load_drive_dataset,
    load_manifest,
    load_synthetic_images,
    preprocess,
    preprocess_manifest,
    save_manifest,
    split_validation,
    write_drive_layout,
    write_synthetic_dir,
)
from retseg.services.ensemble import Ensemble, combine_probabilities, ensemble_predict
from retseg.services.fid import feature_stats, fid, fid_report
from retseg.services.generator import get_source, toy_generate, write_toy_drive
from retseg.services.metrics import confusion, evaluate_model, roc_auc, scalar_metrics
from retseg.services.pipeline import experiment_grid, pseudo_label, run_experiment_grid, run_pipeline
from retseg.services.training import combined_loss, fine_tune, train

__all__ = [
    'ManifestDataset', 'augment', 'load_drive_dataset', 'load_manifest', 'load_synthetic_images',
    'preprocess', 'preprocess_manifest', 'save_manifest', 'split_validation',
    'write_drive_layout', 'write_synthetic_dir',
    'Ensemble', 'combine_probabilities', 'ensemble_predict',
    'feature_stats', 'fid', 'fid_report',
    'get_source', 'toy_generate', 'write_toy_drive',
    'confusion', 'evaluate_model', 'roc_auc', 'scalar_metrics',
    'experiment_grid', 'pseudo_label', 'run_experiment_grid', 'run_pipeline',
    'combined_loss', 'fine_tune', 'train',
]
