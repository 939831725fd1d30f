"""
Tours MLP à paramètres composés, rétro-propagation dérivée à la main et Adagrad.

Une tour CVR de domaine (t_i, s_j) utilise theta = W_b + W_{t_i} + W_{s_j}
(poids et biais, couche par couche). On stocke N_t + N_s + 1 jeux de
paramètres pour servir N_t x N_s tours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from tensor import Matrix, ShapeError, matmul, relu

# couches cachées par défaut
DEFAULT_LAYER_UNITS = (32, 16)


@dataclass(frozen=True)
class TowerArchitecture:
    """L couches entièrement connectées (ReLU) suivies d'une tête scalaire."""
    input_dim: int
    layer_units: Tuple[int, ...] = DEFAULT_LAYER_UNITS

    def __post_init__(self):
        object.__setattr__(self, "layer_units", tuple(int(u) for u in self.layer_units))
        if self.input_dim < 1:
            raise ShapeError(f"Dimension d'entrée invalide: {self.input_dim}")
        if not self.layer_units or min(self.layer_units) < 1:
            raise ShapeError(f"Unités de couches invalides: {self.layer_units}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_units)

    def weight_shapes(self) -> List[Tuple[int, int]]:
        """Formes des matrices de poids, tête scalaire incluse."""
        dims = [self.input_dim, *self.layer_units, 1]
        return [(dims[l], dims[l + 1]) for l in range(len(dims) - 1)]


@dataclass
class ParamSet:
    """Poids et biais d'une tour (couches cachées puis tête)."""
    weights: List[Matrix] = field(repr=False)
    biases: List[np.ndarray] = field(repr=False)

    @classmethod
    def zeros(cls, arch: TowerArchitecture) -> "ParamSet":
        shapes = arch.weight_shapes()
        return cls(
            weights=[np.zeros(shape) for shape in shapes],
            biases=[np.zeros(shape[1]) for shape in shapes],
        )

    @classmethod
    def he_uniform(cls, arch: TowerArchitecture, rng: np.random.Generator) -> "ParamSet":
        """Initialisation He-uniforme des poids, biais nuls."""
        params = cls.zeros(arch)
        for l, (fan_in, fan_out) in enumerate(arch.weight_shapes()):
            limit = np.sqrt(6.0 / fan_in)
            params.weights[l] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return params

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [a.shape for a in self.arrays()]

    def arrays(self) -> Iterator[np.ndarray]:
        """Tous les tableaux, dans un ordre fixe (w0, b0, w1, b1, ...)."""
        for weight, bias in zip(self.weights, self.biases):
            yield weight
            yield bias

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "ParamSet":
        return ParamSet([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def add_(self, other: "ParamSet") -> "ParamSet":
        """Accumulation en place (utilisée pour sommer les gradients)."""
        _check_shapes(self, other)
        for mine, theirs in zip(self.arrays(), other.arrays()):
            mine += theirs
        return self

    def is_zero(self) -> bool:
        return all(not np.any(a) for a in self.arrays())


def _check_shapes(*param_sets: ParamSet) -> None:
    reference = param_sets[0].shapes
    for other in param_sets[1:]:
        if other.shapes != reference:
            raise ShapeError(f"Jeux de paramètres incompatibles: {reference} vs {other.shapes}")


@dataclass(frozen=True)
class ComposedTowerParams:
    """Somme matérialisée base + type + scénario, couche par couche."""
    base: ParamSet = field(repr=False)
    type_set: Optional[ParamSet] = field(repr=False)
    scenario_set: Optional[ParamSet] = field(repr=False)
    weights: Tuple[Matrix, ...] = field(repr=False)
    biases: Tuple[np.ndarray, ...] = field(repr=False)


TowerParams = Union[ParamSet, ComposedTowerParams]


def compose(
    base: ParamSet,
    type_set: Optional[ParamSet] = None,
    scenario_set: Optional[ParamSet] = None,
) -> ComposedTowerParams:
    """
    theta(t, s) = base + type + scenario (somme terme à terme).

    Les jeux absents (mode paramètres communs) sont ignorés.
    """
    parts = [p for p in (base, type_set, scenario_set) if p is not None]
    _check_shapes(*parts)
    weights, biases = [], []
    for l in range(len(base.weights)):
        w = base.weights[l].copy()
        b = base.biases[l].copy()
        for part in parts[1:]:
            w += part.weights[l]
            b += part.biases[l]
        weights.append(w)
        biases.append(b)
    return ComposedTowerParams(base, type_set, scenario_set, tuple(weights), tuple(biases))


@dataclass
class TowerCache:
    """Entrées et pré-activations conservées pour la passe arrière."""
    params: TowerParams = field(repr=False)
    inputs: List[Matrix] = field(repr=False)
    pre_activations: List[Matrix] = field(repr=False)


@dataclass
class TowerGradients:
    """
    Gradients d'une tour composée.

    Comme theta = base + type + scenario, le gradient par rapport à chacun des
    trois jeux est le gradient par rapport aux paramètres composés.
    """
    params: ParamSet
    inputs: Matrix

    @property
    def base(self) -> ParamSet:
        return self.params

    @property
    def type(self) -> ParamSet:
        return self.params

    @property
    def scenario(self) -> ParamSet:
        return self.params


def forward(x: Matrix, params: TowerParams) -> Tuple[np.ndarray, TowerCache]:
    """
    Passe avant : logits h (N,) et cache.

    Args:
        x: embeddings concaténés, (N, input_dim) ou vecteur (input_dim,)
        params: jeu simple (tour CTR) ou paramètres composés
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    input_dim = params.weights[0].shape[0]
    if a.shape[1] != input_dim:
        raise ShapeError(f"Entrée de dimension {a.shape[1]}, la tour attend {input_dim}")

    inputs, pre_activations = [], []
    hidden = len(params.weights) - 1
    for l in range(hidden):
        z = matmul(a, params.weights[l]) + params.biases[l]
        inputs.append(a)
        pre_activations.append(z)
        a = relu(z)
    inputs.append(a)
    h = (matmul(a, params.weights[hidden]) + params.biases[hidden])[:, 0]
    return h, TowerCache(params, inputs, pre_activations)


def backward(cache: TowerCache, upstream: np.ndarray) -> TowerGradients:
    """Règle de la chaîne depuis dL/dh (N,) ; les lignes à gradient nul ne contribuent pas."""
    params = cache.params
    hidden = len(params.weights) - 1
    delta = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)

    grad_w: List[Matrix] = [None] * (hidden + 1)
    grad_b: List[np.ndarray] = [None] * (hidden + 1)
    grad_w[hidden] = matmul(cache.inputs[hidden].T, delta)
    grad_b[hidden] = delta.sum(axis=0)
    upstream_a = matmul(delta, params.weights[hidden].T)
    for l in reversed(range(hidden)):
        dz = upstream_a * (cache.pre_activations[l] > 0)
        grad_w[l] = matmul(cache.inputs[l].T, dz)
        grad_b[l] = dz.sum(axis=0)
        upstream_a = matmul(dz, params.weights[l].T)
    return TowerGradients(ParamSet(grad_w, grad_b), upstream_a)


# ==================== ADAGRAD ====================

def adagrad_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    accumulators: Sequence[np.ndarray],
    learning_rate: float,
    epsilon: float,
) -> Sequence[np.ndarray]:
    """
    accum += g^2 ; p -= lr * g / (sqrt(accum) + eps), en place.

    Une entrée de gradient nulle laisse le paramètre et l'accumulateur intacts.
    """
    for p, g, acc in zip(params, grads, accumulators):
        if p.shape != g.shape or p.shape != acc.shape:
            raise ShapeError(f"Adagrad: formes incompatibles {p.shape}, {g.shape}, {acc.shape}")
        acc += g * g
        update = np.zeros_like(g)
        np.divide(g, np.sqrt(acc) + epsilon, out=update, where=(g != 0))
        p -= learning_rate * update
    return params


@dataclass
class AdagradState:
    """Accumulateurs de gradients au carré, un jeu par groupe de paramètres."""
    learning_rate: float = 0.05
    epsilon: float = 1e-8
    accumulators: Dict[str, ParamSet] = field(default_factory=dict, repr=False)

    def slot(self, key: str, like: ParamSet) -> ParamSet:
        if key not in self.accumulators:
            self.accumulators[key] = like.zeros_like()
        return self.accumulators[key]

    def step(self, key: str, params: ParamSet, grads: ParamSet) -> ParamSet:
        accum = self.slot(key, params)
        _check_shapes(params, grads, accum)
        adagrad_step(list(params.arrays()), list(grads.arrays()), list(accum.arrays()),
                     self.learning_rate, self.epsilon)
        return params

    def step_rows(self, weights: Matrix, accum: Matrix, rows: np.ndarray, grads: Matrix) -> None:
        """Mise à jour creuse : seules les lignes consultées bougent."""
        if rows.size == 0:
            return
        p = weights[rows]
        acc = accum[rows]
        adagrad_step([p], [grads], [acc], self.learning_rate, self.epsilon)
        weights[rows] = p
        accum[rows] = acc


# ==================== COMPTAGES ====================

def parameter_set_count(num_types: int, num_scenarios: int, domain_params: bool = True) -> int:
    """Jeux de paramètres stockés : N_t + N_s + 1 (ou 1 sans paramètres de domaine)."""
    return num_types + num_scenarios + 1 if domain_params else 1


def composable_tower_count(num_types: int, num_scenarios: int) -> int:
    return num_types * num_scenarios


def reduction_percent(before: int, after: int) -> float:
    """Réduction relative en pourcentage, arrondie à 0.1 (ex: 357 -> 39 : 89.1)."""
    return round(100.0 * (before - after) / before, 1)
