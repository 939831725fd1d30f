"""
Fixtures partagées : petits registres, mini-batchs aléatoires et fichiers de
configuration synthétiques écrits dans tmp_path.
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from data import MiniBatch  # noqa: E402
from domains import DomainRegistry  # noqa: E402

SMALL_SLOTS = 101


@pytest.fixture
def registry_2x2():
    return DomainRegistry(("t1", "t2"), ("s1", "s2"))


@pytest.fixture
def registry_6x4():
    return DomainRegistry(tuple(f"t{i}" for i in range(6)), tuple(f"s{j}" for j in range(4)))


@pytest.fixture
def random_batch():
    """Fabrique de mini-batchs aléatoires (z => y respecté)."""
    def make(registry, size, num_fields, seed, num_slots=SMALL_SLOTS, types=None, scenarios=None):
        rng = np.random.default_rng(seed)
        types = list(range(registry.num_types)) if types is None else list(types)
        scenarios = list(range(registry.num_scenarios)) if scenarios is None else list(scenarios)
        clicks = rng.integers(0, 2, size)
        return MiniBatch.build(
            slots=rng.integers(0, num_slots, (size, num_fields + 2)),
            type_ids=rng.choice(types, size),
            scenario_ids=rng.choice(scenarios, size),
            clicks=clicks,
            conversions=clicks * rng.integers(0, 2, size),
            registry=registry,
        )
    return make


@pytest.fixture
def write_file(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


SMALL_SPEC = """\
# journal synthétique de test
num_types=2
num_scenarios=2
num_instances=400
num_fields=3
vocab_size=8
seed=11
cvr_bias=0.0
type_offsets=-1.5,1.5
scenario_offsets=-0.5,0.5
"""


@pytest.fixture
def small_spec_path(write_file):
    return write_file("synthetic.conf", SMALL_SPEC)


@pytest.fixture
def small_run_config(write_file, small_spec_path, tmp_path):
    """Fabrique de fichiers de configuration d'entraînement rapides."""
    def make(name="run.conf", **extra):
        values = {
            "seed": "3",
            "synthetic_spec": small_spec_path,
            "layer_units": "4,3",
            "embedding_dim": "2",
            "num_slots": str(SMALL_SLOTS),
            "batch_size": "64",
            "epochs": "2",
            "output_dir": str(tmp_path / name.replace(".conf", "")),
        }
        values.update({key: str(value) for key, value in extra.items()})
        return write_file(name, "".join(f"{key}={value}\n" for key, value in values.items()))
    return make
