"""Test the persisted pipeline state"""

import json

import pytest

from retseg.models.pipeline_state import STATE_FILENAME, PipelineStage, PipelineState
from retseg.utilities.exceptions import ConfigurationError


class TestPipelineState:
    """Test PipelineState"""

    def test_stage_order(self):
        """Test stages are declared in execution order"""
        assert [s.value for s in PipelineStage] == [
            'base_train', 'generate', 'pseudo_label', 'retrain', 'finetune', 'done',
        ]

    def test_artifact_keys(self):
        """Test keys carry the iteration except for base training"""
        state = PipelineState(config_hash='h', iteration=2)
        assert state.artifact_key(PipelineStage.BASE_TRAIN) == 'base_train'
        assert state.artifact_key(PipelineStage.RETRAIN) == 'retrain_2'
        assert state.artifact_key(PipelineStage.GENERATE, iteration=5) == 'generate_5'

    def test_advance(self):
        """Test advancing records the completed stage"""
        state = PipelineState(config_hash='h')
        state.advance(PipelineStage.GENERATE)
        state.stage = PipelineStage.FINETUNE
        state.advance(PipelineStage.GENERATE, iteration=2)
        assert state.completed == ['base_train', 'finetune_1']
        assert state.stage == PipelineStage.GENERATE
        assert state.iteration == 2
        assert not state.is_done

    def test_save_and_load(self, tmp_path):
        """Test the JSON file round trip"""
        state = PipelineState(config_hash='abc', checkpoints=['runs/x/best.pt'], fid={'1': 2.5})
        state.advance(PipelineStage.GENERATE)
        state.save(tmp_path)

        payload = json.loads((tmp_path / STATE_FILENAME).read_text())
        assert payload['stage'] == 'generate'
        loaded = PipelineState.load(tmp_path)
        assert loaded == state
        assert loaded.latest_checkpoint == 'runs/x/best.pt'

    def test_load_missing(self, tmp_path):
        """Test a directory without state"""
        assert PipelineState.load(tmp_path) is None

    def test_unknown_stage(self):
        """Test a corrupted stage name"""
        with pytest.raises(ConfigurationError):
            PipelineState.from_dict({'config_hash': 'h', 'stage': 'warp'})
