"""
Registre des types de conversion et des scénarios d'affichage, construction des
masques par domaine et poids dynamiques de la perte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np


class DomainError(ValueError):
    """Type ou scénario inconnu du registre."""


@dataclass(frozen=True)
class DomainRegistry:
    """
    Ensembles fixes des N_t types de conversion et N_s scénarios d'affichage.

    Le domaine (i, j) a pour index aplati i * N_s + j.
    """
    types: Tuple[str, ...]
    scenarios: Tuple[str, ...]
    _type_index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _scenario_index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(str(t) for t in self.types))
        object.__setattr__(self, "scenarios", tuple(str(s) for s in self.scenarios))
        if not self.types or not self.scenarios:
            raise DomainError("Le registre doit contenir au moins un type et un scénario")
        if len(set(self.types)) != len(self.types):
            raise DomainError(f"Codes de type dupliqués: {self.types}")
        if len(set(self.scenarios)) != len(self.scenarios):
            raise DomainError(f"Codes de scénario dupliqués: {self.scenarios}")
        object.__setattr__(self, "_type_index", {code: i for i, code in enumerate(self.types)})
        object.__setattr__(self, "_scenario_index", {code: j for j, code in enumerate(self.scenarios)})

    @classmethod
    def infer(cls, pairs: Iterable[Tuple[str, str]]) -> "DomainRegistry":
        """Registre déduit d'un parcours des données (codes triés)."""
        types, scenarios = set(), set()
        for type_code, scenario_code in pairs:
            types.add(type_code)
            scenarios.add(scenario_code)
        return cls(tuple(sorted(types)), tuple(sorted(scenarios)))

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def num_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def num_domains(self) -> int:
        return self.num_types * self.num_scenarios

    def type_index(self, code: str) -> int:
        try:
            return self._type_index[code]
        except KeyError:
            raise DomainError(f"Type de conversion inconnu: {code}") from None

    def scenario_index(self, code: str) -> int:
        try:
            return self._scenario_index[code]
        except KeyError:
            raise DomainError(f"Scénario d'affichage inconnu: {code}") from None

    def type_code(self, index: int) -> str:
        self.check_ids(index, 0)
        return self.types[index]

    def scenario_code(self, index: int) -> str:
        self.check_ids(0, index)
        return self.scenarios[index]

    def check_ids(self, type_id: int, scenario_id: int) -> None:
        if not 0 <= type_id < self.num_types:
            raise DomainError(f"Index de type hors registre: {type_id}")
        if not 0 <= scenario_id < self.num_scenarios:
            raise DomainError(f"Index de scénario hors registre: {scenario_id}")

    def domain_index(self, type_id: int, scenario_id: int) -> int:
        self.check_ids(type_id, scenario_id)
        return type_id * self.num_scenarios + scenario_id

    def domain_pair(self, domain: int) -> Tuple[int, int]:
        if not 0 <= domain < self.num_domains:
            raise DomainError(f"Index de domaine hors registre: {domain}")
        return divmod(domain, self.num_scenarios)

    def domain_label(self, domain: int) -> str:
        i, j = self.domain_pair(domain)
        return f"{self.types[i]}|{self.scenarios[j]}"

    def to_dict(self) -> Dict[str, List[str]]:
        return {"types": list(self.types), "scenarios": list(self.scenarios)}


@dataclass(frozen=True)
class BatchMasks:
    """
    Masques binaires des domaines non vides d'un mini-batch.

    ``masks[k]`` est le masque du domaine ``domains[k]`` ; les domaines vides ne
    sont pas matérialisés.
    """
    batch_size: int
    domains: Tuple[int, ...]
    counts: Tuple[int, ...]
    masks: np.ndarray = field(repr=False)
    domain_of: np.ndarray = field(repr=False)

    @property
    def nonempty_domains(self) -> Tuple[int, ...]:
        return self.domains

    def mask_for(self, domain: int) -> np.ndarray:
        """Masque d'un domaine quelconque (vecteur nul si le domaine est vide)."""
        if domain in self.domains:
            return self.masks[self.domains.index(domain)]
        return np.zeros(self.batch_size)

    def rows_for(self, domain: int) -> np.ndarray:
        return np.flatnonzero(self.domain_of == domain)

    def count_for(self, domain: int) -> int:
        if domain in self.domains:
            return self.counts[self.domains.index(domain)]
        return 0


def compute_masks(
    type_ids: Sequence[int],
    scenario_ids: Sequence[int],
    registry: DomainRegistry,
) -> BatchMasks:
    """m_{t_i s_j}[n] = 1 si l'instance n appartient au domaine (t_i, s_j)."""
    type_ids = np.asarray(type_ids, dtype=np.int64)
    scenario_ids = np.asarray(scenario_ids, dtype=np.int64)
    if type_ids.shape != scenario_ids.shape or type_ids.ndim != 1:
        raise DomainError("Identifiants de type et de scénario de longueurs différentes")
    if type_ids.size and (type_ids.min() < 0 or type_ids.max() >= registry.num_types):
        bad = type_ids[(type_ids < 0) | (type_ids >= registry.num_types)][0]
        raise DomainError(f"Index de type hors registre: {bad}")
    if scenario_ids.size and (scenario_ids.min() < 0 or scenario_ids.max() >= registry.num_scenarios):
        bad = scenario_ids[(scenario_ids < 0) | (scenario_ids >= registry.num_scenarios)][0]
        raise DomainError(f"Index de scénario hors registre: {bad}")

    domain_of = type_ids * registry.num_scenarios + scenario_ids
    domains, counts = np.unique(domain_of, return_counts=True)
    masks = (domain_of[None, :] == domains[:, None]).astype(np.float64)
    return BatchMasks(
        batch_size=int(domain_of.size),
        domains=tuple(int(d) for d in domains),
        counts=tuple(int(c) for c in counts),
        masks=masks,
        domain_of=domain_of,
    )


def dynamic_weights(masks: BatchMasks) -> np.ndarray:
    """wgt(x_n) = N / N_c, recalculé à chaque mini-batch."""
    if masks.batch_size < 1:
        raise ValueError("Mini-batch vide")
    weights = np.empty(masks.batch_size)
    for domain, count in zip(masks.domains, masks.counts):
        weights[masks.domain_of == domain] = masks.batch_size / count
    return weights
