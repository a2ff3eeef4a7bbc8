import dataclasses

import numpy as np
import pytest

from moxgate.model import ConfigError, init_params
from moxgate.objective import RegularizerConfig
from moxgate.synthetic import SyntheticSpec, generate_synthetic
from moxgate.tensor import RngState
from moxgate.training import Checkpoint, OptimizerConfig, TrainConfig, evaluate, train, write_log

SMALL = dict(embed_dim=16, encoder_heads=2, cross_heads=2, token_count=4, classifier_hidden_dim=16)


def small_data(seed=0, **kw):
    opts = dict(samples_per_class=20, num_classes=3, modality_dims=[6, 5, 4], separation=2.0, seed=seed)
    opts.update(kw)
    return generate_synthetic(SyntheticSpec(**opts))


def cfg(**kw):
    opts = dict(batch_size=16, max_epochs=4, patience=10, seed=0, model=dict(SMALL))
    opts.update(kw)
    return TrainConfig(**opts)


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.max_epochs, c.patience) == (32, 200, 20)
        assert c.optimizer.lr == 1e-4 and c.optimizer.weight_decay == 1e-2
        assert c.reg.lambda1 == 1e-3 and c.reg.lambda2 == 1e-4
        assert c.focal.gamma == 2.0 and c.focal.alpha is None

    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"max_epochs": 0}, {"patience": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestTrain:
    def test_log_columns(self):
        data = small_data()
        result = train(data, cfg())
        row = result.log[0]
        for key in ("epoch", "loss", "focal", "balance_penalty", "frobenius_penalty", "w_gene", "w_methylation",
                    "w_mirna", "val_accuracy", "val_precision", "val_recall", "val_f1"):
            assert key in row
        assert [r["epoch"] for r in result.log] == [1, 2, 3, 4]
        for r in result.log:
            w = [r["w_gene"], r["w_methylation"], r["w_mirna"]]
            assert abs(sum(w) - 1.0) <= 1e-12

    def test_same_seed_same_log(self, tmp_path):
        data = small_data()
        for i in range(2):
            result = train(data, cfg())
            write_log(result.log, tmp_path / f"log{i}.csv")
            result.checkpoint.save(tmp_path / f"ck{i}.mxc")
        assert (tmp_path / "log0.csv").read_bytes() == (tmp_path / "log1.csv").read_bytes()
        assert (tmp_path / "ck0.mxc").read_bytes() == (tmp_path / "ck1.mxc").read_bytes()

    def test_different_seed_different_log(self):
        data = small_data()
        assert train(data, cfg(seed=0)).log != train(data, cfg(seed=1)).log

    def test_zero_lr_leaves_params(self):
        data = small_data()
        c = cfg(optimizer=OptimizerConfig(lr=0.0))
        result = train(data, c)
        init = init_params(c.model_config(data), RngState(c.seed).spawn(0))
        for k, v in init.arrays.items():
            assert v.tobytes() == result.final.params.arrays[k].tobytes(), k

    def test_early_stopping(self):
        data = small_data()
        result = train(data, cfg(max_epochs=50, patience=1, optimizer=OptimizerConfig(lr=0.0)))
        # lr 0 never improves after epoch 1
        assert len(result.log) == 2 and result.best_epoch == 1

    def test_best_checkpoint_by_val_f1(self):
        data = small_data()
        result = train(data, cfg(max_epochs=8, optimizer=OptimizerConfig(lr=1e-2)))
        f1 = [r["val_f1"] for r in result.log]
        assert result.best_epoch == int(np.argmax(f1)) + 1
        assert evaluate(result.checkpoint, data, "val").weighted_f1 == pytest.approx(max(f1), abs=1e-15)

    def test_empty_split(self):
        data = small_data()
        empty = dataclasses.replace(data, split=np.where(data.split == "val", "train", data.split))
        with pytest.raises(ConfigError):
            train(empty, cfg())

    def test_overfit_two_classes(self):
        data = small_data(num_classes=2, separation=4.0, noise=0.5)
        result = train(data, cfg(max_epochs=50, patience=50, optimizer=OptimizerConfig(lr=1e-2)))
        assert max(r["train_accuracy"] for r in result.log) == 1.0

    def test_batchnorm_variant_trains(self):
        data = small_data()
        result = train(data, cfg(model=dict(SMALL, use_batchnorm=True, use_skip=True, use_feedforward_attention=True)))
        assert "bn0.mean" in result.checkpoint.params.buffers
        assert np.isfinite(result.log[-1]["loss"])


@pytest.fixture(scope="module")
def one_signal_modality():
    data = small_data(samples_per_class=30, modality_dims=[8, 8, 8], noise=1.0)
    rng = np.random.default_rng(0)
    arrays = [data.arrays[0]] + [rng.standard_normal(a.shape) for a in data.arrays[1:]]
    return dataclasses.replace(data, arrays=arrays)


class TestModalityWeights:
    def run(self, data, lambda1):
        c = cfg(max_epochs=60, patience=60, reg=RegularizerConfig(lambda1, 1e-4), optimizer=OptimizerConfig(lr=1e-2))
        log = train(data, c).log
        return np.array([[r[f"w_{n}"] for n in data.modality_names] for r in log])

    def test_large_lambda_keeps_uniform(self, one_signal_modality):
        w = self.run(one_signal_modality, 1e3)
        assert np.abs(w - 1 / 3).max() < 0.05

    def test_zero_lambda_favours_signal(self, one_signal_modality):
        w = self.run(one_signal_modality, 0.0)
        assert w[-1, 0] > 1 / 3


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        data = small_data()
        ck = train(data, cfg()).final
        ck.save(tmp_path / "c.mxc")
        back = Checkpoint.load(tmp_path / "c.mxc")
        assert back.model_cfg == ck.model_cfg
        assert back.step == ck.step and back.epoch == ck.epoch
        assert back.rng_state == ck.rng_state
        assert back.class_names == ck.class_names and back.modality_names == ck.modality_names
        for k, v in ck.params.arrays.items():
            assert back.params.arrays[k].tobytes() == v.tobytes()
        for k, v in ck.optimizer.m.items():
            assert back.optimizer.m[k].tobytes() == v.tobytes()
            assert back.optimizer.v[k].tobytes() == ck.optimizer.v[k].tobytes()
        back.save(tmp_path / "d.mxc")
        assert (tmp_path / "c.mxc").read_bytes() == (tmp_path / "d.mxc").read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="gone.mxc"):
            Checkpoint.load(tmp_path / "gone.mxc")

    def test_dim_mismatch(self):
        data = small_data()
        ck = train(data, cfg(max_epochs=1)).checkpoint
        with pytest.raises(ConfigError):
            evaluate(ck, data.select_modalities(["gene"]))
