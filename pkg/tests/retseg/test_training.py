"""Test the loss and the training loops"""

import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
import torch

from retseg.ai.checkpoint import load_checkpoint, save_checkpoint
from retseg.ai.saunet import build_saunet
from retseg.models.sample import SPLIT_TRAIN, DatasetManifest
from retseg.models.train_record import RECORD_COLUMNS
from retseg.services.generator import as_labeled_real, toy_generate
from retseg.services.metrics import evaluate_model
from retseg.services.training import RECORD_FILENAME, combined_loss, fine_tune, parameter_snapshot, train
from retseg.utilities.config import SAUNetConfig, TrainConfig
from retseg.utilities.exceptions import CheckpointError, ConfigurationError, DataError, ShapeError


def _fresh(config, seed=0):
    torch.manual_seed(seed)
    return build_saunet(config)


def _same_parameters(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


class TestCombinedLoss:
    """Test Dice + BCE"""

    def test_perfect_prediction(self):
        """Test p == g at the extremes gives ~0"""
        target = (torch.rand(2, 1, 8, 8) > 0.5).float()
        assert float(combined_loss(target.clone(), target)) == pytest.approx(0.0, abs=1e-5)

    def test_half_against_ones(self):
        """Test p = 0.5 against an all-ones 2x2 target"""
        pred = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
        target = torch.ones(1, 1, 2, 2, dtype=torch.float64)
        eps = 1e-6
        dice = 1.0 - (2.0 * 2.0 + eps) / (2.0 + 4.0 + eps)
        expected = 0.5 * dice + 0.5 * math.log(2.0)
        assert float(combined_loss(pred, target)) == pytest.approx(expected, abs=1e-9)

    def test_zero_target_scalar_oracle(self):
        """Test an all-zero target against an all-1e-7 prediction"""
        pred = torch.full((1, 1, 2, 2), 1e-7, dtype=torch.float64)
        target = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        eps = 1e-6
        dice = 1.0 - eps / (4 * 1e-7 + eps)
        bce = -math.log(1.0 - 1e-7)
        assert float(combined_loss(pred, target)) == pytest.approx(0.5 * dice + 0.5 * bce, rel=1e-9)

    def test_nonnegative_and_finite(self):
        """Test random inputs, including exact 0 and 1 predictions"""
        torch.manual_seed(0)
        for _ in range(20):
            pred = torch.rand(2, 1, 8, 8)
            pred[0, 0, 0, 0], pred[0, 0, 0, 1] = 0.0, 1.0
            target = (torch.rand(2, 1, 8, 8) > 0.5).float()
            loss = combined_loss(pred, target)
            assert torch.isfinite(loss)
            assert float(loss) >= 0.0

    def test_batch_permutation_invariant(self):
        """Test the loss ignores batch order"""
        pred = torch.rand(4, 1, 8, 8, dtype=torch.float64)
        target = (torch.rand(4, 1, 8, 8) > 0.5).double()
        perm = torch.tensor([2, 0, 3, 1])
        assert float(combined_loss(pred[perm], target[perm])) == pytest.approx(float(combined_loss(pred, target)))

    def test_weights(self):
        """Test pure-BCE weighting"""
        pred = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
        target = torch.ones(1, 1, 2, 2, dtype=torch.float64)
        assert float(combined_loss(pred, target, weights=(0.0, 1.0))) == pytest.approx(math.log(2.0))

    def test_shape_mismatch(self):
        """Test differing shapes raise ShapeError"""
        with pytest.raises(ShapeError):
            combined_loss(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 4, 5))


class TestTrain:
    """Test the two-phase training loop"""

    def test_schedule_and_artifacts(self, tmp_path, tiny_model_config, tiny_train_config, toy_train, toy_test):
        """Test record rows, learning rates and written files"""
        net = _fresh(tiny_model_config)
        record = train(net, toy_train, tiny_train_config, validation=toy_test, checkpoint_dir=tmp_path)

        assert len(record) == tiny_train_config.total_epochs
        assert [row['epoch'] for row in record.rows] == [1, 2, 3]
        assert [row['phase'] for row in record.rows] == [1, 1, 2]
        assert [row['lr'] for row in record.rows] == [1e-3, 1e-3, 1e-4]

        for name in ('best.pt', 'best.json', 'last.pt', 'last.json', RECORD_FILENAME):
            assert (tmp_path / name).exists()
        frame = pd.read_csv(tmp_path / RECORD_FILENAME)
        assert list(frame.columns) == RECORD_COLUMNS
        assert len(frame) == 3

    def test_best_checkpoint_has_max_validation_f1(self, tmp_path, tiny_model_config, tiny_train_config,
                                                   toy_train, toy_test):
        """Test the best checkpoint is the first epoch reaching the max F1"""
        record = train(_fresh(tiny_model_config), toy_train, tiny_train_config, validation=toy_test,
                       checkpoint_dir=tmp_path)
        f1s = [row['f1'] for row in record.rows]
        assert record.best_f1 == max(f1s)
        assert record.best_epoch == f1s.index(max(f1s)) + 1
        assert record.best_checkpoint == str(tmp_path / 'best.pt')

    def test_record_matches_offline_metrics(self, tmp_path, tiny_model_config, tiny_train_config,
                                            toy_train, toy_test):
        """Test validation metrics in the record equal an offline evaluation of the best checkpoint"""
        record = train(_fresh(tiny_model_config), toy_train, tiny_train_config, validation=toy_test,
                       checkpoint_dir=tmp_path)
        report = evaluate_model(load_checkpoint(tmp_path / 'best'), toy_test)
        best_row = record.rows[record.best_epoch - 1]
        for name in ('se', 'sp', 'acc', 'auc', 'f1', 'precision'):
            assert report.to_dict()[name] == pytest.approx(best_row[name], abs=1e-12)

    def test_reproducible(self, tiny_model_config, tiny_train_config, toy_train, toy_test):
        """Test two runs with the same seed end with identical parameters"""
        first = _fresh(tiny_model_config)
        second = _fresh(tiny_model_config)
        record_a = train(first, toy_train, tiny_train_config, validation=toy_test)
        record_b = train(second, toy_train, tiny_train_config, validation=toy_test)
        assert _same_parameters(parameter_snapshot(first), parameter_snapshot(second))
        assert record_a.rows == record_b.rows

    def test_holds_out_validation(self, tiny_model_config, tiny_train_config, toy_train):
        """Test training without a validation manifest still works"""
        record = train(_fresh(tiny_model_config), toy_train, replace(tiny_train_config, epochs_phase2=0))
        assert len(record) == 2
        assert record.best_checkpoint is None

    def test_augmentation(self, tiny_model_config, tiny_train_config, toy_train, toy_test):
        """Test training with augmentation enabled"""
        cfg = replace(tiny_train_config, epochs_phase1=1, epochs_phase2=0,
                      augmentation=replace(tiny_train_config.augmentation, enabled=True))
        assert len(train(_fresh(tiny_model_config), toy_train, cfg, validation=toy_test)) == 1

    def test_zero_epochs(self, tiny_model_config, toy_train):
        """Test an empty schedule is a configuration error"""
        with pytest.raises(ConfigurationError):
            train(_fresh(tiny_model_config), toy_train, TrainConfig(epochs_phase1=0, epochs_phase2=0))

    def test_unlabeled_sample(self, tiny_model_config, tiny_train_config, toy_test):
        """Test unlabeled data raises DataError naming the sample"""
        unlabeled = toy_generate(2, seed=5, size=32)
        with pytest.raises(DataError) as exc_info:
            train(_fresh(tiny_model_config), unlabeled, tiny_train_config, validation=toy_test)
        assert exc_info.value.details['sample_id'] == '0000'


class TestFineTune:
    """Test fine-tuning from a checkpoint"""

    def test_zero_epochs_leave_parameters(self, tiny_model_config, tiny_train_config, toy_train):
        """Test zero fine-tune epochs change nothing"""
        net = _fresh(tiny_model_config)
        before = parameter_snapshot(net)
        record = fine_tune(net, toy_train, replace(tiny_train_config, epochs_phase1=0, epochs_phase2=0))
        assert len(record) == 0
        assert _same_parameters(before, parameter_snapshot(net))

    def test_zero_lr_leaves_parameters(self, tiny_model_config, tiny_train_config, toy_train, toy_test):
        """Test a zero learning rate only touches batch-norm statistics"""
        net = _fresh(tiny_model_config)
        before = parameter_snapshot(net)
        buffers = [b.clone() for b in net.buffers()]
        record = fine_tune(net, toy_train, replace(tiny_train_config, lr_phase2=0.0), validation=toy_test)
        assert len(record) == 1
        assert _same_parameters(before, parameter_snapshot(net))
        assert any(not torch.equal(a, b) for a, b in zip(buffers, net.buffers()))

    def test_loads_checkpoint_and_records_phase_two(self, tmp_path, tiny_model_config, tiny_train_config,
                                                    toy_train, toy_test):
        """Test fine-tuning starts from the checkpoint and runs epochs_phase2 epochs"""
        source = _fresh(tiny_model_config, seed=1)
        save_checkpoint(source, tmp_path / 'source', epoch=0, rng_seed=0)
        net = _fresh(tiny_model_config, seed=2)
        cfg = replace(tiny_train_config, epochs_phase2=2)
        record = fine_tune(net, toy_train, cfg, checkpoint=tmp_path / 'source', validation=toy_test,
                           checkpoint_dir=tmp_path / 'ft')
        assert len(record) == 2
        assert all(row['phase'] == 2 for row in record.rows)
        assert record.rows[0]['lr'] == cfg.lr_phase2
        assert (tmp_path / 'ft' / 'last.pt').exists()

    def test_incompatible_checkpoint(self, tmp_path, tiny_model_config, tiny_train_config, toy_train):
        """Test a checkpoint of another architecture"""
        save_checkpoint(_fresh(tiny_model_config), tmp_path / 'other', epoch=0, rng_seed=0)
        net = _fresh(replace(tiny_model_config, base_width=8))
        with pytest.raises(CheckpointError):
            fine_tune(net, toy_train, tiny_train_config, checkpoint=tmp_path / 'other')


class TestOnePixelBottleneck:
    """Test batches that would leave batch norm one value per channel"""

    @pytest.fixture
    def config(self):
        return SAUNetConfig(base_width=2, depth=4, dropblock_keep_prob=1.0, attention_kernel=3, bn_momentum=0.9)

    def test_trailing_single_sample_batch_is_dropped(self, config, tiny_train_config):
        """Test three training samples at batch size 2 train on the full batch only"""
        data = as_labeled_real(toy_generate(4, seed=11, size=16), SPLIT_TRAIN)
        record = train(_fresh(config), data, replace(tiny_train_config, epochs_phase2=0))
        assert len(record) == 2
        assert all(math.isfinite(row['loss']) for row in record.rows)

    def test_single_sample_is_configuration_error(self, config, tiny_train_config):
        """Test one training sample cannot fill a batch of two"""
        data = as_labeled_real(toy_generate(2, seed=11, size=16), SPLIT_TRAIN)
        with pytest.raises(ConfigurationError) as exc_info:
            train(_fresh(config), data, tiny_train_config)
        assert exc_info.value.details['setting'] == 'training.batch_size'


@pytest.mark.slow
class TestOverfit:
    """Test a small network can memorize two images"""

    def test_memorizes_two_samples(self):
        """Test the default SA-UNet blocks reach train Dice 0.9 on two 128 x 128 samples"""
        data = as_labeled_real(toy_generate(2, seed=21, size=128), SPLIT_TRAIN)
        config = SAUNetConfig(base_width=8, depth=3)
        assert (config.dropblock_size, config.dropblock_keep_prob) == (7, 0.9)
        cfg = TrainConfig(epochs_phase1=200, lr_phase1=1e-3, epochs_phase2=0, batch_size=2, seed=3,
                          plateau_patience=50)
        record = train(_fresh(config), data, cfg, validation=DatasetManifest(list(data), split=SPLIT_TRAIN))
        assert len(record) == 200
        assert record.last['train_dice'] >= 0.9
