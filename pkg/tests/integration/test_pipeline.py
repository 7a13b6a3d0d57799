"""Integration tests for the synthetic-data pipeline"""

import json

import pandas as pd
import pytest

import retseg.services.pipeline as pipeline_module
from retseg.models.pipeline_state import STATE_FILENAME, PipelineStage, PipelineState
from retseg.services.pipeline import FINAL_REPORT, experiment_grid, run_experiment_grid, run_pipeline
from retseg.utilities.config import PipelineConfig, SAUNetConfig, TrainConfig
from retseg.utilities.exceptions import ConfigurationError, PipelineStageError
from tests.helpers.drive import write_drive_fixture

pytestmark = [pytest.mark.integration, pytest.mark.slow]


@pytest.fixture
def data_root(tmp_path):
    """DRIVE-format dataset with 4 training and 2 test images at 32 x 32"""
    return write_drive_fixture(tmp_path / 'DRIVE', n_train=4, n_test=2, size=32, seed=5)


@pytest.fixture
def model_config():
    return SAUNetConfig(base_width=4, depth=2, dropblock_size=3, attention_kernel=3, bn_momentum=0.9)


@pytest.fixture
def train_config():
    return TrainConfig(epochs_phase1=2, lr_phase1=1e-3, epochs_phase2=1, lr_phase2=1e-4,
                       batch_size=2, seed=0, validation_fraction=0.25)


@pytest.fixture
def pipeline_config():
    return PipelineConfig(synthetic_count=4, toy_size=32)


def run(pipeline_config, train_config, data_root, run_dir, model_config, **kwargs):
    return run_pipeline(pipeline_config, train_config, data_root, run_dir=run_dir,
                        model_config=model_config, target_size=32, seed=0, **kwargs)


class TestPipelineRun:
    """Test complete pipeline runs"""

    def test_toy_pipeline(self, tmp_path, data_root, model_config, train_config, pipeline_config):
        """Test one iteration produces checkpoints, pseudo-labels and a final report"""
        run_dir = tmp_path / 'run'
        state = run(pipeline_config, train_config, data_root, run_dir, model_config)

        assert state.stage == PipelineStage.DONE
        assert len(state.checkpoints) >= 2
        assert (run_dir / FINAL_REPORT).is_file()
        assert (run_dir / STATE_FILENAME).is_file()
        assert (run_dir / 'pseudo_labels' / 'iter_1' / 'manifest.json').is_file()
        assert '1' in state.fid

        final = json.loads((run_dir / FINAL_REPORT).read_text())
        assert final['method'] == 'final'
        assert 0.0 <= final['f1'] <= 1.0

    def test_two_iterations(self, tmp_path, data_root, model_config, train_config):
        """Test later iterations pseudo-label with the latest model"""
        cfg = PipelineConfig(synthetic_count=3, toy_size=32, iterations=2, order='synth_then_real')
        state = run(cfg, train_config, data_root, tmp_path / 'run', model_config)
        assert 'finetune_2' in state.artifacts
        assert state.fid.keys() == {'1', '2'}
        assert len(state.checkpoints) == 5

    def test_synth_only_skips_finetune(self, tmp_path, data_root, model_config, train_config):
        """Test synth_only keeps the retrained checkpoint as the final model"""
        cfg = PipelineConfig(synthetic_count=3, toy_size=32, order='synth_only')
        state = run(cfg, train_config, data_root, tmp_path / 'run', model_config)
        assert state.artifacts['finetune_1'] == state.artifacts['retrain_1']

    def test_reproducible(self, tmp_path, data_root, model_config, train_config, pipeline_config):
        """Test equal configs and seeds give byte-identical final reports"""
        run(pipeline_config, train_config, data_root, tmp_path / 'a', model_config)
        run(pipeline_config, train_config, data_root, tmp_path / 'b', model_config)
        assert (tmp_path / 'a' / FINAL_REPORT).read_bytes() == (tmp_path / 'b' / FINAL_REPORT).read_bytes()

    def test_synthetic_data_does_not_hurt(self, tmp_path, model_config):
        """Test the fine-tuned model keeps the base F1 and pseudo-labels track the reference trees"""
        data_root = write_drive_fixture(tmp_path / 'DRIVE64', n_train=8, n_test=4, size=64, seed=5)
        train_cfg = TrainConfig(epochs_phase1=30, lr_phase1=1e-3, epochs_phase2=10, lr_phase2=1e-4,
                                batch_size=2, seed=0, validation_fraction=0.25)
        cfg = PipelineConfig(synthetic_count=50, toy_size=64)
        state = run_pipeline(cfg, train_cfg, data_root, run_dir=tmp_path / 'run', model_config=model_config,
                             target_size=64, seed=0)

        assert state.stage == PipelineStage.DONE
        assert state.reports['final']['f1'] >= state.reports['base_train']['f1'] - 0.05
        assert state.reports['pseudo_label_1']['reference_f1'] >= 0.5


class TestPipelineResume:
    """Test resuming interrupted runs"""

    def test_resumes_at_failed_stage(self, tmp_path, monkeypatch, data_root, model_config,
                                     train_config, pipeline_config):
        """Test a failure in retraining leaves earlier stages done"""
        real_train = pipeline_module.train
        calls = []

        def failing_train(*args, **kwargs):
            calls.append(1)
            if len(calls) == 2:
                raise RuntimeError('interrupted')
            return real_train(*args, **kwargs)

        monkeypatch.setattr(pipeline_module, 'train', failing_train)
        run_dir = tmp_path / 'run'
        with pytest.raises(PipelineStageError) as exc_info:
            run(pipeline_config, train_config, data_root, run_dir, model_config)
        assert exc_info.value.details['stage'] == 'retrain'

        saved = PipelineState.load(run_dir)
        assert saved.stage == PipelineStage.RETRAIN
        assert saved.completed == ['base_train', 'generate_1', 'pseudo_label_1']

        calls.clear()
        state = run(pipeline_config, train_config, data_root, run_dir, model_config)
        assert len(calls) == 1
        assert state.stage == PipelineStage.DONE

    def test_completed_run_is_not_repeated(self, tmp_path, monkeypatch, data_root, model_config,
                                           train_config, pipeline_config):
        """Test re-running a finished directory trains nothing"""
        run_dir = tmp_path / 'run'
        run(pipeline_config, train_config, data_root, run_dir, model_config)

        def no_train(*args, **kwargs):
            raise AssertionError('training should not run')

        monkeypatch.setattr(pipeline_module, 'train', no_train)
        state = run(pipeline_config, train_config, data_root, run_dir, model_config)
        assert state.is_done

    def test_config_change_is_refused(self, tmp_path, data_root, model_config, train_config, pipeline_config):
        """Test a directory holding another configuration's state"""
        run_dir = tmp_path / 'run'
        run_dir.mkdir()
        PipelineState(config_hash='other').save(run_dir)
        with pytest.raises(ConfigurationError):
            run(pipeline_config, train_config, data_root, run_dir, model_config)


def test_small_grid(tmp_path, data_root, model_config, train_config):
    """Test a two-configuration grid writes the comparison table"""
    grid = experiment_grid(PipelineConfig(toy_size=32), synthetic_counts=[2],
                           orders=['real_then_synth'], augmentations=[('none', False, False), ('real', True, False)])
    table = run_experiment_grid(grid, train_config, data_root, run_dir=tmp_path / 'grid',
                                model_config=model_config, target_size=32, ensemble_modes=('mean',))

    # base row, then per configuration its own row and one ensemble row
    assert len(table) == 1 + 2 * 2
    assert table['method'].tolist()[:3] == [
        'base', 'real_then_synth-aug_none-n2', 'real_then_synth-aug_none-n2+base-mean',
    ]
    saved = pd.read_csv(tmp_path / 'grid' / 'comparison.csv')
    assert saved['method'].tolist() == table['method'].tolist()
