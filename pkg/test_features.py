"""
Tests du hachage des features et de la table d'embedding.
"""
import numpy as np
import pytest

from features import (
    FNV_OFFSET_BASIS,
    EmbeddingTable,
    FeatureVector,
    IntegrityError,
    embed,
    fnv1a_64,
    hash_feature,
    hash_instance,
)
from tensor import make_rng


def test_fnv1a_reference_values():
    assert fnv1a_64(b"") == FNV_OFFSET_BASIS
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C


def test_hash_feature_is_stable_and_in_range():
    slot = hash_feature("user", "u42", 1000)
    assert slot == hash_feature("user", "u42", 1000)
    assert 0 <= slot < 1000
    # le nom du champ fait partie de la clé
    assert hash_feature("ad", "u42", 1 << 30) != hash_feature("user", "u42", 1 << 30)
    with pytest.raises(ValueError):
        hash_feature("user", "u42", 0)


def test_feature_vector_rejects_conversion_without_click():
    with pytest.raises(IntegrityError):
        FeatureVector.from_values(("a",), ("x",), 0, 0, click=0, conversion=1)
    with pytest.raises(IntegrityError):
        FeatureVector.from_values(("a", "b"), ("x",), 0, 0)


def test_feature_vector_values_follow_schema():
    fv = FeatureVector.from_values(("user", "ad"), ("u42", "ad7"), 1, 0, click=1, conversion=1)
    assert fv.values == ("u42", "ad7")
    assert fv.to_dict()["fields"] == {"user": "u42", "ad": "ad7"}


def test_embedding_lookup_concatenates_fields():
    table = EmbeddingTable.create(num_slots=10, dim=3, rng=make_rng(0))
    slots = np.array([[1, 4], [4, 9]])
    x = table.lookup(slots)
    assert x.shape == (2, 6)
    assert np.array_equal(x[0, 3:], table.weights[4])
    assert np.array_equal(x[1, :3], table.weights[4])


def test_scatter_gradient_accumulates_shared_rows():
    table = EmbeddingTable.zeros(10, 2)
    slots = np.array([[1, 4], [4, 4]])
    grad_x = np.arange(8, dtype=np.float64).reshape(2, 4)
    rows, grad = table.scatter_gradient(slots, grad_x)
    assert rows.tolist() == [1, 4]
    assert grad[0].tolist() == [0.0, 1.0]
    assert grad[1].tolist() == [2.0 + 4.0 + 6.0, 3.0 + 5.0 + 7.0]


def test_embed_single_instance():
    table = EmbeddingTable.create(num_slots=50, dim=2, rng=make_rng(3))
    fv = FeatureVector.from_values(("user", "ad"), ("u1", "a1"), 0, 0)
    slots = hash_instance(fv, 50)
    assert np.array_equal(embed(fv, table), np.concatenate([table.weights[s] for s in slots]))


def test_hash_feature_matches_explicit_fnv1a():
    h = 14695981039346656037
    for byte in "user=42".encode("utf-8"):
        h ^= byte
        h = (h * 1099511628211) % 2 ** 64
    assert hash_feature("user", "42", 1000003) == h % 1000003
