"""
Assemblage du réseau multi-domaines masqué : embedding partagé, tour CTR
unique, tours CVR composées par domaine et chemin de prédiction unitaire.

Les variantes de référence (paramètres communs, sans pondération dynamique,
ESMM, DNN) partagent la même interface de prédiction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from data import MiniBatch, encode_records
from domains import DomainRegistry
from features import DEFAULT_EMBEDDING_DIM, DEFAULT_NUM_SLOTS, EmbeddingTable, FeatureVector
from loss import LossBreakdown, Weighting, combined_loss, cvr_only_loss
from network import (
    DEFAULT_LAYER_UNITS,
    AdagradState,
    ParamSet,
    TowerArchitecture,
    TowerCache,
    TowerParams,
    backward,
    composable_tower_count,
    compose,
    forward,
    parameter_set_count,
)
from tensor import is_finite, make_rng, sigmoid

logger = logging.getLogger("TRAIN")


class ModelMode(Enum):
    """Variante de modèle (MMN complet, ablations et références)."""
    MMN = "mmn"
    COMMON_PARAMS = "mmn_common_params"
    NO_DYNAMIC_WEIGHT = "mmn_no_dynamic_weight"
    ESMM = "esmm"
    DNN = "dnn"

    @property
    def has_domain_params(self) -> bool:
        return self in (ModelMode.MMN, ModelMode.NO_DYNAMIC_WEIGHT)

    @property
    def weighting(self) -> Weighting:
        if self in (ModelMode.MMN, ModelMode.COMMON_PARAMS):
            return Weighting.DYNAMIC
        return Weighting.NONE

    @property
    def domain_features(self) -> bool:
        """Type et scénario fournis comme deux champs hachés (modèle unifié)."""
        return self in (ModelMode.ESMM, ModelMode.DNN)

    @property
    def has_ctr_tower(self) -> bool:
        return self is not ModelMode.DNN


class TrainingError(ValueError):
    """Perte ou gradient non fini pendant l'entraînement."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (pas {step})")
        self.step = step


@dataclass
class ModelGradients:
    """Gradients d'un mini-batch ; seuls les groupes touchés sont présents."""
    embedding_rows: np.ndarray
    embedding: np.ndarray
    ctr: Optional[ParamSet]
    base: ParamSet
    types: Dict[int, ParamSet] = field(default_factory=dict)
    scenarios: Dict[int, ParamSet] = field(default_factory=dict)

    def arrays(self) -> List[np.ndarray]:
        arrays = [self.embedding]
        for group in (self.ctr, self.base, *self.types.values(), *self.scenarios.values()):
            if group is not None:
                arrays.extend(group.arrays())
        return arrays


@dataclass
class _ForwardPass:
    x: np.ndarray
    p_ctr: np.ndarray
    p_cvr: np.ndarray
    ctr_cache: Optional[TowerCache]
    domain_caches: List[Tuple[int, np.ndarray, TowerCache]]


class MmnModel:
    """
    Modèle complet. Les jeux de paramètres de type et de scénario n'existent
    qu'en mode ``mmn`` et ``mmn_no_dynamic_weight``.
    """

    def __init__(
        self,
        registry: DomainRegistry,
        num_fields: int,
        mode: ModelMode,
        embedding: EmbeddingTable,
        cvr_arch: TowerArchitecture,
        base: ParamSet,
        ctr_arch: Optional[TowerArchitecture] = None,
        ctr_tower: Optional[ParamSet] = None,
        type_sets: Sequence[ParamSet] = (),
        scenario_sets: Sequence[ParamSet] = (),
        ctr_domain_features: bool = False,
        schema: Sequence[str] = (),
    ):
        self.registry = registry
        self.num_fields = num_fields
        self.schema = tuple(schema) or tuple(f"f{k}" for k in range(num_fields))
        if len(self.schema) != num_fields:
            raise ValueError(f"Schéma de {len(self.schema)} champs pour {num_fields} champs")
        self.mode = ModelMode(mode)
        self.embedding = embedding
        self.cvr_arch = cvr_arch
        self.ctr_arch = ctr_arch
        self.base = base
        self.ctr_tower = ctr_tower
        self.type_sets = list(type_sets)
        self.scenario_sets = list(scenario_sets)
        self.ctr_domain_features = ctr_domain_features
        # Tours composées par les chemins batch (le chemin unitaire ne compte pas)
        self.compositions = 0

        if self.mode.has_ctr_tower and ctr_tower is None:
            raise ValueError(f"Le mode {self.mode.value} requiert une tour CTR")
        if self.mode.has_domain_params and (
            len(self.type_sets) != registry.num_types or len(self.scenario_sets) != registry.num_scenarios
        ):
            raise ValueError("Un jeu de paramètres par type et par scénario est requis")
        if not self.mode.has_domain_params and (self.type_sets or self.scenario_sets):
            raise ValueError(f"Le mode {self.mode.value} ne stocke que les paramètres de base")

    @classmethod
    def create(
        cls,
        registry: DomainRegistry,
        num_fields: int,
        mode: ModelMode | str = ModelMode.MMN,
        layer_units: Sequence[int] = DEFAULT_LAYER_UNITS,
        embedding_dim: int = DEFAULT_EMBEDDING_DIM,
        num_slots: int = DEFAULT_NUM_SLOTS,
        seed: int = 0,
        ctr_domain_features: bool = False,
        zero_init: bool = False,
        schema: Sequence[str] = (),
    ) -> "MmnModel":
        """
        Initialisation déterministe : embedding, tour CTR puis base (He-uniforme),
        jeux de type et de scénario à zéro. ``zero_init`` met tout à zéro.
        """
        mode = ModelMode(mode)
        rng = make_rng(seed)
        cvr_fields = num_fields + 2 if mode.domain_features else num_fields
        ctr_fields = num_fields + 2 if (mode.domain_features or ctr_domain_features) else num_fields
        cvr_arch = TowerArchitecture(cvr_fields * embedding_dim, tuple(layer_units))
        ctr_arch = TowerArchitecture(ctr_fields * embedding_dim, tuple(layer_units)) if mode.has_ctr_tower else None

        if zero_init:
            embedding = EmbeddingTable.zeros(num_slots, embedding_dim)
            ctr_tower = ParamSet.zeros(ctr_arch) if ctr_arch else None
            base = ParamSet.zeros(cvr_arch)
        else:
            embedding = EmbeddingTable.create(num_slots, embedding_dim, rng)
            ctr_tower = ParamSet.he_uniform(ctr_arch, rng) if ctr_arch else None
            base = ParamSet.he_uniform(cvr_arch, rng)

        type_sets, scenario_sets = [], []
        if mode.has_domain_params:
            type_sets = [ParamSet.zeros(cvr_arch) for _ in range(registry.num_types)]
            scenario_sets = [ParamSet.zeros(cvr_arch) for _ in range(registry.num_scenarios)]
        return cls(registry, num_fields, mode, embedding, cvr_arch, base, ctr_arch, ctr_tower,
                   type_sets, scenario_sets, ctr_domain_features, schema)

    # ==================== STRUCTURE ====================

    @property
    def cvr_input_dim(self) -> int:
        return self.cvr_arch.input_dim

    @property
    def ctr_input_dim(self) -> int:
        return self.ctr_arch.input_dim if self.ctr_arch else 0

    def parameter_set_count(self) -> int:
        return parameter_set_count(self.registry.num_types, self.registry.num_scenarios,
                                   self.mode.has_domain_params)

    def composable_tower_count(self) -> int:
        return composable_tower_count(self.registry.num_types, self.registry.num_scenarios)

    def param_groups(self) -> Dict[str, ParamSet]:
        """Groupes de paramètres de tours, dans un ordre stable."""
        groups: Dict[str, ParamSet] = {}
        if self.ctr_tower is not None:
            groups["ctr"] = self.ctr_tower
        groups["base"] = self.base
        for i, params in enumerate(self.type_sets):
            groups[f"type.{i}"] = params
        for j, params in enumerate(self.scenario_sets):
            groups[f"scenario.{j}"] = params
        return groups

    def create_optimizer(self, learning_rate: float = 0.05, epsilon: float = 1e-8) -> AdagradState:
        """Adagrad avec un accumulateur nul par groupe (l'embedding porte le sien)."""
        state = AdagradState(learning_rate, epsilon)
        for key, params in self.param_groups().items():
            state.slot(key, params)
        return state

    def tower_for(self, type_id: int, scenario_id: int) -> TowerParams:
        """Compose theta(t, s) ; une seule tour de base hors modes à paramètres de domaine.

        Sans effet de bord : appelé concurremment par les workers du service.
        """
        if self.mode.has_domain_params:
            return compose(self.base, self.type_sets[type_id], self.scenario_sets[scenario_id])
        return compose(self.base)

    # ==================== PRÉDICTION ====================

    def encode(self, records: Sequence[FeatureVector]) -> MiniBatch:
        return MiniBatch.from_records(records, self.registry, self.embedding.num_slots)

    def _ctr(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[TowerCache]]:
        if self.ctr_tower is None:
            return np.full(x.shape[0], np.nan), None
        h, cache = forward(x[:, :self.ctr_input_dim], self.ctr_tower)
        return sigmoid(h), cache

    def _forward(self, batch: MiniBatch) -> _ForwardPass:
        x = self.embedding.lookup(batch.slots)
        p_ctr, ctr_cache = self._ctr(x)
        x_cvr = x[:, :self.cvr_input_dim]
        h_cvr = np.zeros(batch.size)
        caches = []
        for domain in batch.masks.domains:
            rows = batch.masks.rows_for(domain)
            type_id, scenario_id = self.registry.domain_pair(domain)
            self.compositions += 1
            h, cache = forward(x_cvr[rows], self.tower_for(type_id, scenario_id))
            h_cvr[rows] = h
            caches.append((domain, rows, cache))
        return _ForwardPass(x, p_ctr, sigmoid(h_cvr), ctr_cache, caches)

    def predict_batch(self, batch: MiniBatch) -> Tuple[np.ndarray, np.ndarray]:
        """
        (p_ctr, p_cvr) d'un mini-batch : chaque domaine non vide compose sa tour
        et n'y fait passer que ses propres lignes.
        """
        result = self._forward(batch)
        return result.p_ctr, result.p_cvr

    def predict_batch_masked(self, batch: MiniBatch) -> Tuple[np.ndarray, np.ndarray]:
        """Chemin de référence : tout le batch dans chaque tour, puis somme des sorties masquées."""
        x = self.embedding.lookup(batch.slots)
        p_ctr, _ = self._ctr(x)
        x_cvr = x[:, :self.cvr_input_dim]
        p_cvr = np.zeros(batch.size)
        for k, domain in enumerate(batch.masks.domains):
            type_id, scenario_id = self.registry.domain_pair(domain)
            self.compositions += 1
            h, _ = forward(x_cvr, self.tower_for(type_id, scenario_id))
            p_cvr += batch.masks.masks[k] * sigmoid(h)
        return p_ctr, p_cvr

    def predict_slots(self, slots: np.ndarray, type_id: int, scenario_id: int) -> Tuple[float, float]:
        """Chemin rapide : une seule tour composée, une seule passe avant."""
        self.registry.check_ids(type_id, scenario_id)
        x = self.embedding.lookup(np.asarray(slots, dtype=np.int64).reshape(1, -1))
        p_ctr, _ = self._ctr(x)
        h, _ = forward(x[:, :self.cvr_input_dim], self.tower_for(type_id, scenario_id))
        return float(p_ctr[0]), float(sigmoid(h)[0])

    def predict_one(self, instance: FeatureVector) -> Tuple[float, float]:
        slots = encode_records([instance], self.registry, self.embedding.num_slots)[0]
        return self.predict_slots(slots, instance.type_id, instance.scenario_id)

    # ==================== ENTRAÎNEMENT ====================

    def compute_gradients(self, batch: MiniBatch, alpha: float = 1.0) -> Tuple[LossBreakdown, ModelGradients]:
        """Perte du mode et gradients par la règle de la chaîne (chemins masqués uniquement)."""
        result = self._forward(batch)
        y, z = batch.clicks, batch.conversions
        if self.mode is ModelMode.DNN:
            breakdown, loss_grads = cvr_only_loss(result.p_cvr, y, z, batch.masks)
        else:
            breakdown, loss_grads = combined_loss(result.p_ctr, result.p_cvr, y, z, batch.masks,
                                                  alpha, self.mode.weighting)

        grad_x = np.zeros_like(result.x)
        ctr_grads = None
        if result.ctr_cache is not None:
            dh_ctr = loss_grads.p_ctr * result.p_ctr * (1.0 - result.p_ctr)
            tower_grads = backward(result.ctr_cache, dh_ctr)
            ctr_grads = tower_grads.params
            grad_x[:, :self.ctr_input_dim] += tower_grads.inputs

        dh_cvr = loss_grads.p_cvr * result.p_cvr * (1.0 - result.p_cvr)
        base_grads = self.base.zeros_like()
        type_grads: Dict[int, ParamSet] = {}
        scenario_grads: Dict[int, ParamSet] = {}
        for domain, rows, cache in result.domain_caches:
            tower_grads = backward(cache, dh_cvr[rows])
            grad_x[rows, :self.cvr_input_dim] += tower_grads.inputs
            base_grads.add_(tower_grads.base)
            if self.mode.has_domain_params:
                type_id, scenario_id = self.registry.domain_pair(domain)
                type_grads.setdefault(type_id, self.base.zeros_like()).add_(tower_grads.type)
                scenario_grads.setdefault(scenario_id, self.base.zeros_like()).add_(tower_grads.scenario)

        rows, embedding_grad = self.embedding.scatter_gradient(batch.slots, grad_x)
        gradients = ModelGradients(rows, embedding_grad, ctr_grads, base_grads, type_grads, scenario_grads)
        return breakdown, gradients

    def apply_gradients(self, gradients: ModelGradients, optimizer: AdagradState) -> None:
        """Adagrad sur l'embedding (lignes consultées) et les groupes touchés."""
        optimizer.step_rows(self.embedding.weights, self.embedding.adagrad_accum,
                            gradients.embedding_rows, gradients.embedding)
        if gradients.ctr is not None:
            optimizer.step("ctr", self.ctr_tower, gradients.ctr)
        optimizer.step("base", self.base, gradients.base)
        for type_id, grads in sorted(gradients.types.items()):
            optimizer.step(f"type.{type_id}", self.type_sets[type_id], grads)
        for scenario_id, grads in sorted(gradients.scenarios.items()):
            optimizer.step(f"scenario.{scenario_id}", self.scenario_sets[scenario_id], grads)

    def train_step(self, batch: MiniBatch, optimizer: AdagradState, alpha: float = 1.0, step: int = 0) -> LossBreakdown:
        """
        Un pas d'optimisation.

        Raises:
            TrainingError: perte ou gradient non fini (aucune mise à jour appliquée)
        """
        breakdown, gradients = self.compute_gradients(batch, alpha)
        if not breakdown.is_finite():
            raise TrainingError("Perte non finie", step)
        if not is_finite(*gradients.arrays()):
            raise TrainingError("Gradient non fini", step)
        self.apply_gradients(gradients, optimizer)
        logger.debug("pas %d: total=%.6f ctr=%.6f ctcvr=%.6f", step, breakdown.total,
                     breakdown.loss_ctr, breakdown.loss_ctcvr)
        return breakdown

    def describe(self) -> Dict[str, object]:
        return {
            "mode": self.mode.value,
            "registry": self.registry.to_dict(),
            "num_fields": self.num_fields,
            "schema": list(self.schema),
            "layer_units": list(self.cvr_arch.layer_units),
            "embedding_dim": self.embedding.dim,
            "num_slots": self.embedding.num_slots,
            "ctr_domain_features": self.ctr_domain_features,
            "parameter_sets": self.parameter_set_count(),
            "composable_towers": self.composable_tower_count(),
        }
