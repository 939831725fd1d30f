"""
Tests du chargement TSV, des mini-batchs et du générateur synthétique.
"""
import math
from collections import Counter

import numpy as np
import pytest

from config import ConfigError
from data import (
    ColumnMapping,
    ParseError,
    SyntheticSpec,
    batches,
    generate,
    ground_truth,
    load_tsv,
    write_ground_truth,
    write_tsv,
)
from domains import DomainError, DomainRegistry
from features import IntegrityError

SCHEMA = ("user", "ad")


def test_load_single_line(write_file):
    path = write_file("log.tsv", "# commentaire\n\n1\t1\tt1\ts1\tu42\tad7\n")
    log = load_tsv(path, SCHEMA)
    assert len(log) == 1
    record = log.records[0]
    assert (record.click, record.conversion) == (1, 1)
    assert record.values == ("u42", "ad7")
    assert log.registry.types == ("t1",)


def test_load_empty_file(write_file):
    log = load_tsv(write_file("empty.tsv", ""), SCHEMA)
    assert len(log) == 0
    assert log.registry is None
    only_comments = load_tsv(write_file("comments.tsv", "# rien\n\n"), SCHEMA)
    assert len(only_comments) == 0
    declared = DomainRegistry(("t1",), ("s1",))
    assert load_tsv(write_file("empty2.tsv", ""), SCHEMA, declared).registry == declared


def test_invalid_utf8_is_a_parse_error_with_line_number(tmp_path):
    path = tmp_path / "binary.tsv"
    path.write_bytes(b"1\t0\tt1\ts1\tu1\ta1\n1\t0\tt1\ts1\t\xff\xfe\ta1\n")
    with pytest.raises(ParseError) as info:
        load_tsv(str(path), SCHEMA)
    assert [n for n, _ in info.value.lines] == [2]


def test_parse_errors_report_line_numbers(write_file):
    path = write_file("bad.tsv", "1\t0\tt1\ts1\tu1\ta1\n1\t0\tt1\ts1\tu1\n0\t0\tt1\ts1\tu1\ta1\n2\t0\tt1\ts1\tu1\ta1\n")
    with pytest.raises(ParseError) as info:
        load_tsv(path, SCHEMA)
    assert [n for n, _ in info.value.lines] == [2, 4]


def test_conversion_without_click_is_an_integrity_error(write_file):
    path = write_file("bad.tsv", "0\t1\tt1\ts1\tu1\ta1\n")
    with pytest.raises(IntegrityError):
        load_tsv(path, SCHEMA)


def test_unknown_code_with_declared_registry(write_file):
    path = write_file("log.tsv", "1\t0\tt9\ts1\tu1\ta1\n")
    with pytest.raises(DomainError):
        load_tsv(path, SCHEMA, DomainRegistry(("t1",), ("s1",)))


def test_click_only_export_with_column_mapping(write_file):
    # conversion, champ, scénario, type, champ
    path = write_file("criteo.tsv", "1\tu1\ts1\tt1\ta1\n0\tu2\ts2\tt1\ta2\n")
    mapping = ColumnMapping(click=None, conversion=0, type=3, scenario=2, fields=(1, 4))
    log = load_tsv(path, SCHEMA, mapping=mapping)
    assert [r.click for r in log.records] == [1, 1]
    assert [r.conversion for r in log.records] == [1, 0]
    assert log.records[1].values == ("u2", "a2")


def test_write_then_load_keeps_records(tmp_path, small_spec_path):
    log = generate(SyntheticSpec.from_file(small_spec_path))
    path = str(tmp_path / "log.tsv")
    write_tsv(log, path)
    loaded = load_tsv(path, log.schema, log.registry)
    assert loaded.records == log.records


def test_batch_sizes_and_determinism(small_spec_path):
    log = generate(SyntheticSpec.from_file(small_spec_path))
    log = type(log)(log.schema, log.registry, log.records[:10])
    assert [b.size for b in batches(log, 4, shuffle_seed=5)] == [4, 4, 2]
    first = [b.indices.tolist() for b in batches(log, 4, shuffle_seed=5, epoch=1)]
    second = [b.indices.tolist() for b in batches(log, 4, shuffle_seed=5, epoch=1)]
    assert first == second
    assert [b.indices.tolist() for b in batches(log, 4)] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    with pytest.raises(ValueError):
        next(batches(log, 0))


def test_batches_cover_every_record_once(small_spec_path):
    log = generate(SyntheticSpec.from_file(small_spec_path))
    seen = Counter()
    domains_per_batch = []
    for batch in batches(log, 64, shuffle_seed=9, epoch=2):
        seen.update(batch.indices.tolist())
        domains_per_batch.append(len(batch.masks.domains))
        assert np.array_equal(batch.clicks, [log.records[i].click for i in batch.indices])
    assert seen == Counter(range(len(log)))
    assert max(domains_per_batch) > 1


def test_generated_logs_respect_conversion_implies_click(small_spec_path):
    log = generate(SyntheticSpec.from_file(small_spec_path))
    assert all(r.click == 1 for r in log.records if r.conversion == 1)
    assert len(log) == 400
    assert log.schema == ("f0", "f1", "f2")


def test_generation_is_deterministic(small_spec_path):
    spec = SyntheticSpec.from_file(small_spec_path)
    assert generate(spec).records == generate(spec).records


def _empirical_cvr(records):
    clicked = [r for r in records if r.click == 1]
    return sum(r.conversion for r in clicked) / len(clicked), len(clicked)


def test_symmetric_spec_gives_half_cvr():
    spec = SyntheticSpec(num_types=2, num_scenarios=2, num_instances=20000, num_fields=2, vocab_size=5,
                         seed=1, cvr_bias=0.0, feature_weight=0.0, type_offset_span=0.0, scenario_offset_span=0.0)
    log = generate(spec)
    for domain in range(4):
        cvr, n = _empirical_cvr([r for r in log.records if r.type_id * 2 + r.scenario_id == domain])
        assert abs(cvr - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_closed_form_type_offsets():
    spec = SyntheticSpec(num_types=3, num_scenarios=1, cvr_bias=0.0, feature_weight=0.0,
                         type_offsets=(4.0, -4.0, -4.0), scenario_offsets=(0.0,))
    truth = ground_truth(spec)
    assert abs(truth["type.t0"] - 0.982013790) < 1e-9
    assert abs(truth["type.t1"] - 0.017986210) < 1e-9
    assert truth["domain.t0|s0"] == pytest.approx(truth["type.t0"], rel=1e-15)
    assert truth["base.type.t0"] == truth["domain.t0|s0"]


def test_type_truth_is_mixture_weighted_over_scenarios():
    spec = SyntheticSpec(num_types=2, num_scenarios=2, cvr_bias=-1.0, feature_weight=0.0,
                         type_offsets=(0.0, 1.0), scenario_offsets=(-1.0, 2.0), majority_share=0.7)
    truth = ground_truth(spec)
    share = (1.0 - 0.7) / 3
    expected = (0.7 * truth["domain.t0|s0"] + share * truth["domain.t0|s1"]) / (0.7 + share)
    assert abs(truth["type.t0"] - expected) < 1e-12
    expected = (0.7 * truth["domain.t0|s0"] + share * truth["domain.t1|s0"]) / (0.7 + share)
    assert abs(truth["scenario.s0"] - expected) < 1e-12
    # la marginale de type n'est pas la CVR de base du type
    assert abs(truth["type.t0"] - truth["base.type.t0"]) > 0.01


def _assert_within_binomial_interval(cvr, p, n):
    # intervalle binomial à 99,9 %
    assert abs(cvr - p) <= 3.291 * math.sqrt(p * (1 - p) / n) + 1e-9


def test_empirical_cvr_matches_ground_truth():
    spec = SyntheticSpec(num_types=3, num_scenarios=2, num_instances=30000, num_fields=2, vocab_size=4,
                         seed=5, feature_weight=0.0, cvr_bias=-1.0, type_offsets=(-1.0, 0.0, 1.5),
                         scenario_offsets=(0.0, 0.0))
    log = generate(spec)
    truth = ground_truth(spec)
    for i, code in enumerate(spec.registry.types):
        cvr, n = _empirical_cvr([r for r in log.records if r.type_id == i])
        _assert_within_binomial_interval(cvr, truth[f"type.{code}"], n)


def test_truth_accounts_for_click_selected_features():
    # 3 champs x 4 valeurs : espérance exacte, effets de features forts sur le clic et la CVR
    spec = SyntheticSpec(num_types=2, num_scenarios=1, num_instances=40000, num_fields=3, vocab_size=4,
                         seed=9, feature_weight=2.0, ctr_feature_weight=2.0, cvr_bias=-1.0,
                         type_offsets=(-0.5, 0.5), scenario_offsets=(0.0,))
    log = generate(spec)
    truth = ground_truth(spec)
    for i, code in enumerate(spec.registry.types):
        cvr, n = _empirical_cvr([r for r in log.records if r.type_id == i])
        _assert_within_binomial_interval(cvr, truth[f"domain.{code}|s0"], n)


def test_default_spec_marginals_match_empirical_cvr():
    spec = SyntheticSpec(num_types=3, num_scenarios=4, num_instances=60000, seed=2)
    log = generate(spec)
    truth = ground_truth(spec)
    for i, code in enumerate(spec.registry.types):
        cvr, n = _empirical_cvr([r for r in log.records if r.type_id == i])
        _assert_within_binomial_interval(cvr, truth[f"type.{code}"], n)
    for j, code in enumerate(spec.registry.scenarios):
        cvr, n = _empirical_cvr([r for r in log.records if r.scenario_id == j])
        _assert_within_binomial_interval(cvr, truth[f"scenario.{code}"], n)


def test_type_offsets_solved_from_cvr_range(tmp_path):
    spec = SyntheticSpec(num_types=19, num_scenarios=8, type_cvr_min=0.0005, type_cvr_max=0.276, cvr_bias=-2.0)
    truth = ground_truth(spec)
    assert abs(truth["type_cvr_min"] - 0.0005) < 1e-12
    assert abs(truth["type_cvr_max"] - 0.276) < 1e-12
    path = tmp_path / "truth.kv"
    write_ground_truth(spec, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 19 + 8 + 19 * 8 + 19 + 2
    assert any(line.startswith("type_cvr_max=") for line in lines)


def test_majority_share_mixture():
    spec = SyntheticSpec(num_types=2, num_scenarios=2, majority_share=0.85)
    probs = spec.mixture()
    assert probs[0] == 0.85
    assert abs(probs.sum() - 1.0) < 1e-12


def test_spec_file_rejects_unknown_keys(write_file):
    with pytest.raises(ConfigError):
        SyntheticSpec.from_file(write_file("bad.conf", "num_types=2\ncolour=blue\n"))
    with pytest.raises(ConfigError):
        SyntheticSpec.from_file(write_file("bad2.conf", "num_types=2\ntype_offsets=1,2,3\n"))
