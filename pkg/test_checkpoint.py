"""
Tests du format binaire des checkpoints et de leur écriture atomique.
"""
import os

import pytest

import checkpoint as ckpt
from model import MmnModel


def _checkpoint(registry):
    model = MmnModel.create(registry, 2, layer_units=(3,), embedding_dim=2, num_slots=17, seed=1)
    return ckpt.Checkpoint(model, model.create_optimizer(), step=4, epoch=1)


def test_save_then_load_keeps_bytes(registry_2x2, tmp_path):
    original = _checkpoint(registry_2x2)
    path = str(tmp_path / "model.ckpt")
    ckpt.save(original, path)
    loaded = ckpt.load(path)
    assert ckpt.to_bytes(loaded) == ckpt.to_bytes(original)
    assert (loaded.step, loaded.epoch) == (4, 1)
    assert os.listdir(tmp_path) == ["model.ckpt"]


def test_failed_save_leaves_previous_file_and_no_temporary(registry_2x2, tmp_path, monkeypatch):
    path = str(tmp_path / "model.ckpt")
    ckpt.save(_checkpoint(registry_2x2), path)
    before = (tmp_path / "model.ckpt").read_bytes()

    def fail(src, dst):
        raise OSError("disque plein")

    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError):
        ckpt.save(_checkpoint(registry_2x2), path)
    assert os.listdir(tmp_path) == ["model.ckpt"]
    assert (tmp_path / "model.ckpt").read_bytes() == before


def test_truncated_or_foreign_files_are_rejected(registry_2x2, tmp_path):
    payload = ckpt.to_bytes(_checkpoint(registry_2x2))
    with pytest.raises(ckpt.CheckpointError):
        ckpt.from_bytes(payload[:-8])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.from_bytes(b"PAS UN CHECKPOINT" + payload[17:])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(str(tmp_path / "absent.ckpt"))
    assert issubclass(ckpt.CheckpointError, ValueError)
