"""
Tests de l'orchestration : checkpoints, déterminisme, audit des données,
journal d'entraînement et ablations.
"""
import logging
import math

import numpy as np
import pytest

import checkpoint as ckpt
import trainer
from config import RunConfig
from data import SyntheticSpec, generate, write_tsv
from loss import ctcvr_instance_losses
from model import MmnModel, TrainingError
from trainer import TEST_PHASE, TRAIN_PHASE, column_mapping, run_ablation, train
from training_log import read_training_log


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_zero_epochs_checkpoint_equals_fresh_model(small_run_config, small_spec_path):
    config = RunConfig.from_file(small_run_config(epochs=0))
    result = train(config)
    log = generate(SyntheticSpec.from_file(small_spec_path))
    model = MmnModel.create(log.registry, 3, "mmn", layer_units=(4, 3), embedding_dim=2, num_slots=101,
                            seed=3, schema=log.schema)
    expected = ckpt.to_bytes(ckpt.Checkpoint(model, model.create_optimizer(0.05, 1e-8), 0, 0))
    assert _read_bytes(result.checkpoint_path) == expected
    assert result.epochs_run == 0


def test_training_is_deterministic(small_run_config):
    first = train(RunConfig.from_file(small_run_config("a.conf")))
    second = train(RunConfig.from_file(small_run_config("b.conf")))
    assert _read_bytes(first.checkpoint_path) == _read_bytes(second.checkpoint_path)
    assert first.report.to_key_values() == second.report.to_key_values()
    with open(first.config.report_kv_path, encoding="utf-8") as a, open(second.config.report_kv_path,
                                                                          encoding="utf-8") as b:
        assert a.read() == b.read()


def test_single_dataset_is_opened(small_run_config):
    result = train(RunConfig.from_file(small_run_config()))
    assert result.audit.count == 1
    assert result.report.dataset_count == 1
    audit = result.training_log.events("audit")[0]
    assert audit.details["dataset_count"] == 1


def test_training_log_fields(small_run_config):
    result = train(RunConfig.from_file(small_run_config()))
    records = read_training_log(result.config.log_path)
    assert [r.event for r in records][:3] == ["start", "audit", "checkpoint"]
    assert records[-1].event == "end"
    epochs = [r for r in records if r.event == "epoch"]
    assert [r.epoch for r in epochs] == [1, 2]
    for r in epochs:
        assert math.isfinite(r.loss_total)
        assert abs(r.loss_total - (r.loss_ctr + r.loss_ctcvr_weighted)) < 1e-9
    assert epochs[-1].step == result.steps


def test_reference_prediction_matches_reloaded_checkpoint(small_run_config, small_spec_path):
    result = train(RunConfig.from_file(small_run_config()))
    last = result.training_log.events("checkpoint")[-1]
    model = ckpt.load(result.checkpoint_path).model
    train_log, _ = generate(SyntheticSpec.from_file(small_spec_path)).split(0.7)
    assert model.predict_one(train_log.records[0]) == (last.reference_p_ctr, last.reference_p_cvr)


def test_identical_ablation_has_zero_deltas(small_run_config, tmp_path):
    config = RunConfig.from_file(small_run_config(epochs=1))
    result = run_ablation(config, ["mmn", "mmn"])
    deltas = result.deltas["1_mmn"]
    assert all(value in (0.0, None) for value in deltas.values())
    assert deltas["average"] == 0.0
    assert (tmp_path / "run" / "ablation.txt").exists()


def test_ablation_needs_two_modes(small_run_config):
    with pytest.raises(ValueError):
        run_ablation(RunConfig.from_file(small_run_config()), ["mmn"])


def test_non_finite_loss_keeps_last_checkpoint(small_run_config, monkeypatch):
    config = RunConfig.from_file(small_run_config())

    def explode(self, batch, optimizer, alpha=1.0, step=0):
        raise TrainingError("Perte non finie", step)

    monkeypatch.setattr(MmnModel, "train_step", explode)
    with pytest.raises(TrainingError):
        train(config)
    saved = ckpt.load(config.checkpoint_path)
    assert saved.step == 0
    records = read_training_log(config.log_path)
    assert records[-1].event == "abort"
    assert records[-1].step == 1


def test_column_mapping_from_config(write_file, tmp_path):
    path = write_file("log.tsv", "1\tu\ts1\tt1\ta\n")
    config = RunConfig(seed=0, train_path=path, schema=("user", "ad"), column_conversion=0, column_type=3,
                       column_scenario=2, column_fields=(1, 4), constant_click=1)
    mapping = column_mapping(config)
    assert mapping.click is None
    assert (mapping.conversion, mapping.type, mapping.scenario, mapping.fields) == (0, 3, 2, (1, 4))
    default = RunConfig(seed=0, train_path=path, schema=("user", "ad"))
    assert column_mapping(default).click == 0


def test_test_file_is_audited_after_training(small_run_config, small_spec_path, tmp_path):
    test_path = tmp_path / "test.tsv"
    write_tsv(generate(SyntheticSpec.from_file(small_spec_path)), str(test_path))
    result = train(RunConfig.from_file(small_run_config(test_path=str(test_path))))
    assert result.audit.opened == [small_spec_path]
    assert str(test_path) not in result.audit.sources(TRAIN_PHASE)
    assert result.audit.sources(TEST_PHASE) == [str(test_path)]
    assert result.audit.count == 1
    assert result.training_log.events("audit")[0].details["datasets"] == [small_spec_path]


def test_verbose_diagnostic_uses_pre_update_predictions(small_run_config, monkeypatch, caplog):
    before_update, diagnosed = [], []
    original_step = MmnModel.train_step

    def recording_step(self, batch, optimizer, alpha=1.0, step=0):
        before_update.append(self.predict_batch(batch)[1].copy())
        return original_step(self, batch, optimizer, alpha, step)

    def recording_losses(p_ctr, p_cvr, clicks, conversions):
        diagnosed.append(np.array(p_cvr, copy=True))
        return ctcvr_instance_losses(p_ctr, p_cvr, clicks, conversions)

    monkeypatch.setattr(MmnModel, "train_step", recording_step)
    monkeypatch.setattr(trainer, "ctcvr_instance_losses", recording_losses)
    caplog.set_level(logging.DEBUG, logger="TRAIN")
    train(RunConfig.from_file(small_run_config(epochs=1, verbose="true")))
    assert diagnosed and len(diagnosed) == len(before_update)
    for expected, seen in zip(before_update, diagnosed):
        np.testing.assert_array_equal(seen, expected)
