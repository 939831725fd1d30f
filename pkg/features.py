"""
Hachage des features, table d'embedding et construction du vecteur concaténé x.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from tensor import Matrix, ShapeError, make_rng

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK_64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_EMBEDDING_DIM = 4
DEFAULT_NUM_SLOTS = 1 << 16
EMBEDDING_INIT_SCALE = 0.05

# Champs virtuels utilisés quand le type et le scénario sont embarqués comme features
TYPE_FIELD = "__type__"
SCENARIO_FIELD = "__scenario__"


class IntegrityError(ValueError):
    """Enregistrement incohérent (ex: conversion sans clic)."""


@dataclass(frozen=True)
class FeatureVector:
    """Une impression : features hachables, domaine et labels."""
    field_values: Tuple[Tuple[str, str], ...]
    type_id: int
    scenario_id: int
    click: int = 0
    conversion: int = 0

    def __post_init__(self):
        if self.click not in (0, 1) or self.conversion not in (0, 1):
            raise IntegrityError(f"Labels binaires attendus, reçu y={self.click}, z={self.conversion}")
        if self.conversion == 1 and self.click == 0:
            raise IntegrityError("Conversion sans clic (z=1, y=0)")

    @classmethod
    def from_values(
        cls,
        schema: Sequence[str],
        values: Sequence[str],
        type_id: int,
        scenario_id: int,
        click: int = 0,
        conversion: int = 0,
    ) -> "FeatureVector":
        """Construit une instance à partir des valeurs ordonnées selon le schéma."""
        if len(values) != len(schema):
            raise IntegrityError(f"{len(values)} valeurs pour un schéma de {len(schema)} champs")
        return cls(
            field_values=tuple(zip(schema, (str(v) for v in values))),
            type_id=type_id,
            scenario_id=scenario_id,
            click=click,
            conversion=conversion,
        )

    @property
    def values(self) -> Tuple[str, ...]:
        return tuple(value for _, value in self.field_values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fields": dict(self.field_values),
            "type_id": self.type_id,
            "scenario_id": self.scenario_id,
            "click": self.click,
            "conversion": self.conversion,
        }


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64 bits."""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK_64
    return h


@lru_cache(maxsize=1 << 20)
def hash_feature(field_name: str, value: str, num_slots: int) -> int:
    """Index de slot de la feature ``field=value`` (FNV-1a modulo num_slots)."""
    if num_slots <= 0:
        raise ValueError(f"num_slots doit être > 0, reçu {num_slots}")
    return fnv1a_64(f"{field_name}={value}".encode("utf-8")) % num_slots


def hash_instance(instance: FeatureVector, num_slots: int) -> Tuple[int, ...]:
    return tuple(hash_feature(name, value, num_slots) for name, value in instance.field_values)


@dataclass
class EmbeddingTable:
    """Table d'embedding partagée par la tour CTR et toutes les tours CVR."""
    num_slots: int
    dim: int
    weights: Matrix = field(repr=False)
    adagrad_accum: Matrix = field(repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"Dimension d'embedding invalide: {self.dim}")
        expected = (self.num_slots, self.dim)
        if self.weights.shape != expected or self.adagrad_accum.shape != expected:
            raise ShapeError(f"Table d'embedding: forme attendue {expected}")

    @classmethod
    def create(
        cls,
        num_slots: int = DEFAULT_NUM_SLOTS,
        dim: int = DEFAULT_EMBEDDING_DIM,
        rng: np.random.Generator | None = None,
        init_scale: float = EMBEDDING_INIT_SCALE,
    ) -> "EmbeddingTable":
        """Initialisation uniforme dans [-init_scale, init_scale]."""
        if num_slots <= 0:
            raise ValueError(f"num_slots doit être > 0, reçu {num_slots}")
        rng = rng if rng is not None else make_rng(0)
        weights = rng.uniform(-init_scale, init_scale, size=(num_slots, dim))
        return cls(num_slots, dim, weights, np.zeros((num_slots, dim)))

    @classmethod
    def zeros(cls, num_slots: int, dim: int) -> "EmbeddingTable":
        return cls(num_slots, dim, np.zeros((num_slots, dim)), np.zeros((num_slots, dim)))

    def lookup(self, slots: np.ndarray) -> Matrix:
        """Embeddings concaténés d'une matrice de slots (N, F) -> (N, F * dim)."""
        slots = np.asarray(slots, dtype=np.int64)
        if slots.ndim == 1:
            slots = slots[None, :]
        return self.weights[slots].reshape(slots.shape[0], slots.shape[1] * self.dim)

    def scatter_gradient(self, slots: np.ndarray, grad_x: Matrix) -> Tuple[np.ndarray, Matrix]:
        """
        Rétro-propage le gradient de x vers les lignes consultées.

        Returns:
            (lignes touchées triées, gradient par ligne). Les autres lignes ont
            un gradient exactement nul et ne sont pas retournées.
        """
        slots = np.asarray(slots, dtype=np.int64)
        per_field = grad_x.reshape(slots.shape[0], slots.shape[1], self.dim)
        rows, inverse = np.unique(slots.ravel(), return_inverse=True)
        grad = np.zeros((rows.size, self.dim))
        np.add.at(grad, inverse, per_field.reshape(-1, self.dim))
        return rows, grad


def embed(instance: FeatureVector, table: EmbeddingTable) -> Matrix:
    """Vecteur x (longueur F * dim) d'une instance, dans l'ordre du schéma."""
    return table.lookup(np.array(hash_instance(instance, table.num_slots)))[0]
