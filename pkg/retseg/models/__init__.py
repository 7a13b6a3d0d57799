"""
Domain records for retseg.
"""

from retseg.models.pipeline_state import STATE_FILENAME, PipelineStage, PipelineState
from retseg.models.report import REPORT_COLUMNS, ConfusionCounts, FeatureStats, MetricsReport
from retseg.models.sample import (
    SOURCE_REAL,
    SOURCE_SYNTHETIC,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLITS,
    DatasetManifest,
    RetinalSample,
)
from retseg.models.train_record import RECORD_COLUMNS, TrainRecord

__all__ = [
    'STATE_FILENAME', 'PipelineStage', 'PipelineState',
    'REPORT_COLUMNS', 'ConfusionCounts', 'FeatureStats', 'MetricsReport',
    'SOURCE_REAL', 'SOURCE_SYNTHETIC', 'SPLIT_TEST', 'SPLIT_TRAIN', 'SPLITS',
    'DatasetManifest', 'RetinalSample',
    'RECORD_COLUMNS', 'TrainRecord',
]
