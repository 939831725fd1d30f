"""
Tests de l'AUC, du rapport d'évaluation et des compteurs de passage à l'échelle.
"""
import numpy as np

from data import SyntheticSpec, generate
from domains import DomainRegistry
from evaluation import MetricsReport, auc, report
from model import MmnModel
from tensor import make_rng


def _pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_reference_values():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_undefined_for_single_class():
    assert auc([0.1, 0.2], [1, 1]) is None
    assert auc([0.1, 0.2], [0, 0]) is None
    assert auc([], []) is None


def test_auc_matches_pairwise_count_with_ties():
    rng = make_rng(0)
    for _ in range(50):
        size = int(rng.integers(2, 40))
        # peu de valeurs distinctes : beaucoup d'ex-aequo
        scores = rng.integers(0, 5, size) / 4.0
        labels = rng.integers(0, 2, size)
        labels[0], labels[1] = 0, 1
        assert abs(auc(scores, labels) - _pairwise_auc(scores, labels)) <= 1e-12


def test_auc_invariant_under_monotone_transform():
    rng = make_rng(1)
    scores = rng.uniform(0.01, 0.99, 200)
    labels = rng.integers(0, 2, 200)
    assert auc(scores, labels) == auc(np.log(scores / (1 - scores)), labels)


def _small_log():
    spec = SyntheticSpec(num_types=2, num_scenarios=2, num_instances=600, num_fields=3, vocab_size=6, seed=2,
                         cvr_bias=0.0, type_offsets=(-1.0, 1.0), scenario_offsets=(0.0, 0.5))
    return generate(spec)


def test_zero_initialized_model_scores_one_half():
    log = _small_log()
    model = MmnModel.create(log.registry, 3, zero_init=True, num_slots=101, schema=log.schema)
    result = report(model, log)
    for value in list(result.type_auc.values()) + list(result.scenario_auc.values()):
        assert value in (0.5, None)
    assert result.average_auc == 0.5
    assert result.ctcvr_auc == 0.5


def test_report_average_is_recomputable():
    log = _small_log()
    model = MmnModel.create(log.registry, 3, seed=5, num_slots=101, layer_units=(4, 3), embedding_dim=2)
    result = report(model, log)
    groups = [v for v in list(result.type_auc.values()) + list(result.scenario_auc.values()) if v is not None]
    assert abs(result.average_auc - sum(groups) / len(groups)) < 1e-12
    assert sum(result.domain_counts.values()) == len(log)
    assert result.num_clicks == sum(r.click for r in log.records)
    assert result.parameter_sets == 5
    assert result.composable_towers == 4


def test_dnn_report_has_no_ctcvr_auc():
    log = _small_log()
    model = MmnModel.create(log.registry, 3, "dnn", seed=1, num_slots=101, layer_units=(4,), embedding_dim=2)
    assert report(model, log).ctcvr_auc is None


def _report(**kwargs):
    values = dict(
        mode="mmn", num_instances=10, num_clicks=4,
        type_auc={"t1": 0.75, "t2": None}, scenario_auc={"s1": 0.5},
        domain_auc={"t1|s1": 0.75, "t2|s1": None}, domain_counts={"t1|s1": 6, "t2|s1": 4},
        domain_cvr={"t1|s1": 0.5, "t2|s1": None},
        average_auc=0.625, minority_average_auc=None, ctcvr_auc=0.6,
        parameter_sets=39, composable_towers=357,
    )
    values.update(kwargs)
    return MetricsReport(**values)


def test_key_values_use_na_and_exact_floats():
    lines = _report().to_key_values()
    assert "type_auc.t1=0.75" in lines
    assert "type_auc.t2=NA" in lines
    assert "minority_average_auc=NA" in lines
    assert "parameter_reduction=89.1" in lines
    assert "dataset_reduction=99.7" in lines
    assert "domain_count.t2|s1=4" in lines


def test_scalability_counts_for_large_registry():
    registry = DomainRegistry(tuple(f"t{i}" for i in range(21)), tuple(f"s{j}" for j in range(17)))
    model = MmnModel.create(registry, 2, layer_units=(2,), embedding_dim=1, num_slots=7)
    assert model.parameter_set_count() == 39
    assert model.composable_tower_count() == 357
    text = _report(parameter_sets=model.parameter_set_count()).to_text()
    assert "89.1% de réduction" in text
