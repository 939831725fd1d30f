"""
AUC par type de conversion, par scénario et par domaine, AUC moyenne et
compteurs de passage à l'échelle (jeux de paramètres, jeux de données).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from data import ConversionLog, EncodedLog, batches
from network import reduction_percent

logger = logging.getLogger("EVAL")

UNDEFINED = "NA"
DATASET_COUNT = 1
EVAL_BATCH_SIZE = 4096


def auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """
    AUC de Mann-Whitney sur les rangs (rangs moyens pour les ex-aequo).

    Returns:
        None si le groupe n'a pas au moins un positif et un négatif.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u_statistic = float(ranks[positives].sum()) - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    valid = [v for v in values if v is not None]
    if not valid:
        return None
    return float(sum(valid) / len(valid))


@dataclass
class MetricsReport:
    """Rapport d'évaluation ; les AUC indéfinies valent None."""
    mode: str
    num_instances: int
    num_clicks: int
    type_auc: Dict[str, Optional[float]]
    scenario_auc: Dict[str, Optional[float]]
    domain_auc: Dict[str, Optional[float]]
    domain_counts: Dict[str, int]
    domain_cvr: Dict[str, Optional[float]]
    average_auc: Optional[float]
    minority_average_auc: Optional[float]
    ctcvr_auc: Optional[float]
    parameter_sets: int
    composable_towers: int
    dataset_count: int = DATASET_COUNT
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def parameter_reduction(self) -> float:
        return reduction_percent(self.composable_towers, self.parameter_sets)

    @property
    def dataset_reduction(self) -> float:
        return reduction_percent(self.composable_towers, self.dataset_count)

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["parameter_reduction"] = self.parameter_reduction
        result["dataset_reduction"] = self.dataset_reduction
        return result

    def to_key_values(self) -> List[str]:
        """Une métrique par ligne, ordre stable (comparaison en CI)."""
        lines = [
            f"mode={self.mode}",
            f"num_instances={self.num_instances}",
            f"num_clicks={self.num_clicks}",
            f"average_auc={_fmt(self.average_auc)}",
            f"minority_average_auc={_fmt(self.minority_average_auc)}",
            f"ctcvr_auc={_fmt(self.ctcvr_auc)}",
            f"parameter_sets={self.parameter_sets}",
            f"composable_towers={self.composable_towers}",
            f"parameter_reduction={self.parameter_reduction}",
            f"dataset_count={self.dataset_count}",
            f"dataset_reduction={self.dataset_reduction}",
        ]
        lines += [f"type_auc.{code}={_fmt(v)}" for code, v in self.type_auc.items()]
        lines += [f"scenario_auc.{code}={_fmt(v)}" for code, v in self.scenario_auc.items()]
        lines += [f"domain_auc.{label}={_fmt(v)}" for label, v in self.domain_auc.items()]
        lines += [f"domain_count.{label}={n}" for label, n in self.domain_counts.items()]
        lines += [f"domain_cvr.{label}={_fmt(v)}" for label, v in self.domain_cvr.items()]
        return lines

    def to_text(self) -> str:
        """Tableaux alignés lisibles."""
        out = [
            f"Mode                 : {self.mode}",
            f"Instances / clics    : {self.num_instances} / {self.num_clicks}",
            f"AUC moyenne          : {_fmt(self.average_auc, 4)}",
            f"AUC moy. minoritaire : {_fmt(self.minority_average_auc, 4)}",
            f"AUC CTCVR            : {_fmt(self.ctcvr_auc, 4)}",
            f"Jeux de paramètres   : {self.composable_towers} -> {self.parameter_sets} "
            f"({self.parameter_reduction}% de réduction)",
            f"Jeux de données      : {self.composable_towers} -> {self.dataset_count} "
            f"({self.dataset_reduction}% de réduction)",
            "",
        ]
        out += _table("Type", self.type_auc)
        out += [""] + _table("Scénario", self.scenario_auc)
        width = max([len(label) for label in self.domain_auc] + [len("Domaine")])
        out += ["", f"{'Domaine':<{width}}  {'AUC':>8}  {'N':>8}  {'CVR':>8}"]
        for label, value in self.domain_auc.items():
            out.append(f"{label:<{width}}  {_fmt(value, 4):>8}  {self.domain_counts[label]:>8}  "
                       f"{_fmt(self.domain_cvr[label], 4):>8}")
        return "\n".join(out) + "\n"


def _fmt(value: Optional[float], digits: Optional[int] = None) -> str:
    if value is None:
        return UNDEFINED
    return repr(float(value)) if digits is None else f"{value:.{digits}f}"


def _table(title: str, values: Dict[str, Optional[float]]) -> List[str]:
    width = max([len(code) for code in values] + [len(title)])
    return [f"{title:<{width}}  {'AUC':>8}"] + [f"{code:<{width}}  {_fmt(v, 4):>8}" for code, v in values.items()]


def score_log(model, log: ConversionLog | EncodedLog, batch_size: int = EVAL_BATCH_SIZE):
    """Prédictions (p_ctr, p_cvr) de tout le journal, dans l'ordre des enregistrements."""
    encoded = log.encode(model.embedding.num_slots) if isinstance(log, ConversionLog) else log
    n = len(encoded)
    p_ctr = np.empty(n)
    p_cvr = np.empty(n)
    for batch in batches(encoded, batch_size):
        p_ctr[batch.indices], p_cvr[batch.indices] = model.predict_batch(batch)
    return encoded, p_ctr, p_cvr


def report(model, log: ConversionLog | EncodedLog) -> MetricsReport:
    """
    AUC CVR (p_cvr contre z) sur les impressions cliquées, par groupe.

    La moyenne porte sur tous les groupes type et scénario valides ; la moyenne
    minoritaire sur les domaines valides hors le plus peuplé.
    """
    encoded, p_ctr, p_cvr = score_log(model, log)
    registry = encoded.registry
    if len(encoded) == 0:
        raise ValueError("Journal de test vide")
    clicked = encoded.clicks == 1
    z = encoded.conversions
    domains = encoded.type_ids * registry.num_scenarios + encoded.scenario_ids

    type_auc = {
        code: auc(p_cvr[clicked & (encoded.type_ids == i)], z[clicked & (encoded.type_ids == i)])
        for i, code in enumerate(registry.types)
    }
    scenario_auc = {
        code: auc(p_cvr[clicked & (encoded.scenario_ids == j)], z[clicked & (encoded.scenario_ids == j)])
        for j, code in enumerate(registry.scenarios)
    }
    domain_auc, domain_counts, domain_cvr = {}, {}, {}
    for d in range(registry.num_domains):
        label = registry.domain_label(d)
        in_domain = domains == d
        domain_auc[label] = auc(p_cvr[clicked & in_domain], z[clicked & in_domain])
        domain_counts[label] = int(in_domain.sum())
        clicks = int((clicked & in_domain).sum())
        domain_cvr[label] = float(z[clicked & in_domain].sum()) / clicks if clicks else None

    majority = max(domain_counts, key=lambda label: domain_counts[label])
    minority = [v for label, v in domain_auc.items() if label != majority]
    ctcvr = None
    if not np.isnan(p_ctr).any():
        ctcvr = auc(p_ctr * p_cvr, encoded.clicks * z)

    result = MetricsReport(
        mode=model.mode.value,
        num_instances=len(encoded),
        num_clicks=int(clicked.sum()),
        type_auc=type_auc,
        scenario_auc=scenario_auc,
        domain_auc=domain_auc,
        domain_counts=domain_counts,
        domain_cvr=domain_cvr,
        average_auc=_mean(list(type_auc.values()) + list(scenario_auc.values())),
        minority_average_auc=_mean(minority),
        ctcvr_auc=ctcvr,
        parameter_sets=model.parameter_set_count(),
        composable_towers=model.composable_tower_count(),
    )
    logger.info("AUC moyenne %s sur %d clics (%s)", _fmt(result.average_auc, 4), result.num_clicks, result.mode)
    return result
