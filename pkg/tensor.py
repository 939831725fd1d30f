"""
Substrat d'algèbre linéaire dense utilisé par tous les autres modules.

Les matrices sont des ``numpy.ndarray`` float64 à deux dimensions. Le produit
matriciel accumule les colonnes dans un ordre fixe : chaque ligne du résultat
ne dépend que de la ligne correspondante de l'entrée, ce qui garantit qu'une
prédiction unitaire et la même ligne d'un mini-batch sont identiques au bit près.
"""
from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

Matrix = NDArray[np.float64]

ArrayLike = Union[Matrix, Sequence[float], Sequence[Sequence[float]], float]


class ShapeError(ValueError):
    """Dimensions incompatibles entre deux opérandes."""


class Elementwise(Enum):
    """Opérations terme à terme supportées."""
    ADD = "add"
    MUL = "mul"


def as_matrix(data: ArrayLike, rows: Optional[int] = None, cols: Optional[int] = None) -> Matrix:
    """
    Convertit des données en matrice float64 2-D (copie contiguë).

    Args:
        data: scalaire, vecteur ou liste de lignes
        rows: nombre de lignes attendu (optionnel)
        cols: nombre de colonnes attendu (optionnel)
    """
    matrix = np.array(data, dtype=np.float64, ndmin=2, copy=True)
    if matrix.ndim != 2:
        raise ShapeError(f"Matrice 2-D attendue, reçu {matrix.ndim} dimensions")
    if rows is not None and matrix.shape[0] != rows:
        raise ShapeError(f"Nombre de lignes invalide: {matrix.shape[0]} (attendu {rows})")
    if cols is not None and matrix.shape[1] != cols:
        raise ShapeError(f"Nombre de colonnes invalide: {matrix.shape[1]} (attendu {cols})")
    return matrix


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def identity(size: int) -> Matrix:
    return np.eye(size, dtype=np.float64)


def is_finite(*arrays: Matrix) -> bool:
    """Vrai si toutes les entrées de tous les tableaux sont finies."""
    return all(bool(np.all(np.isfinite(a))) for a in arrays)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """
    Produit matriciel ``a @ b`` à ordre d'accumulation fixe.

    La somme sur l'indice interne est faite colonne par colonne (j = 0, 1, ...),
    sans BLAS : le résultat est déterministe au bit près et chaque ligne ne
    dépend que de sa propre ligne d'entrée.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul attend deux matrices 2-D, reçu {a.shape} et {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: dimensions incompatibles {a.shape} x {b.shape}")

    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for j in range(a.shape[1]):
        out += a[:, j:j + 1] * b[j]
    return out


def elementwise(a: Matrix, b: Matrix, kind: Union[Elementwise, str]) -> Matrix:
    """Somme ou produit de Hadamard de deux tableaux de même forme."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"Formes différentes: {a.shape} et {b.shape}")
    kind = Elementwise(kind)
    if kind is Elementwise.ADD:
        return a + b
    return a * b


def relu(a: Matrix) -> Matrix:
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def sigmoid(a: Matrix) -> Matrix:
    """Sigmoïde numériquement stable (branche séparée pour les entrées négatives)."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    positive = a >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-a[positive]))
    exp_a = np.exp(a[~positive])
    out[~positive] = exp_a / (1.0 + exp_a)
    return out


def logit(p: float) -> float:
    """Inverse de la sigmoïde pour une probabilité dans ]0, 1[."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"Probabilité hors de ]0, 1[: {p}")
    return float(np.log(p) - np.log1p(-p))


def make_rng(seed: Union[int, Sequence[int]]) -> np.random.Generator:
    """
    Générateur pseudo-aléatoire déterministe.

    Même graine => même flux sur toutes les plateformes (PCG64 initialisé par
    SeedSequence). Une séquence d'entiers permet de dériver des flux
    indépendants (ex: ``[graine, epoque]``).
    """
    return np.random.default_rng(seed)
