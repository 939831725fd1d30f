"""
Pertes de type ESMM (CTR + CTCVR) et perte CTCVR pondérée dynamiquement.

    loss     = loss_ctr + alpha * loss_ctcvr                    (sans pondération)
    loss_MMN = loss_ctr + alpha * (1/N) * sum_n wgt(x_n) l_ctcvr(x_n)

avec wgt(x_n) = N / N_c. La seconde forme vaut exactement la somme des pertes
moyennes par domaine non vide (sans division par le nombre de domaines).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from domains import BatchMasks, dynamic_weights

PROBABILITY_CLAMP = 1e-12


class Weighting(Enum):
    NONE = "none"
    DYNAMIC = "dynamic"


@dataclass
class LossBreakdown:
    """Composantes de la perte d'un mini-batch."""
    loss_ctr: float
    loss_ctcvr: float
    loss_ctcvr_weighted: float
    total: float
    alpha: float
    weighting: str = Weighting.DYNAMIC.value
    loss_cvr: float = 0.0
    domain_losses: Dict[int, float] = field(default_factory=dict)

    def is_finite(self) -> bool:
        return bool(np.isfinite([self.loss_ctr, self.loss_ctcvr, self.loss_ctcvr_weighted,
                                 self.total, self.loss_cvr]).all())

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class LossGradients:
    """dL/dp par instance, pour la probabilité CTR et la probabilité CVR."""
    p_ctr: np.ndarray
    p_cvr: np.ndarray


def clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)


def cross_entropy(p: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Entropie croisée par instance, probabilités bornées à [1e-12, 1 - 1e-12]."""
    p = clamp(p)
    labels = np.asarray(labels, dtype=np.float64)
    return -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))


def _cross_entropy_grad(p: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """dl/dp ; nul là où la borne est active (la perte y est constante)."""
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    active = (p > PROBABILITY_CLAMP) & (p < 1.0 - PROBABILITY_CLAMP)
    pc = clamp(p)
    grad = -(labels / pc - (1.0 - labels) / (1.0 - pc))
    return np.where(active, grad, 0.0)


def ctr_loss(p_ctr: np.ndarray, y: np.ndarray) -> float:
    """Moyenne sur le batch de l'entropie croisée du clic."""
    return float(np.mean(cross_entropy(p_ctr, y)))


def ctcvr_instance_losses(p_ctr: np.ndarray, p_cvr: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """l_ctcvr par instance : label y*z, probabilité p_ctr * p_cvr."""
    q = np.asarray(p_ctr, dtype=np.float64) * np.asarray(p_cvr, dtype=np.float64)
    return cross_entropy(q, np.asarray(y) * np.asarray(z))


def sum_of_domain_means(losses: np.ndarray, masks: BatchMasks) -> float:
    """sum_c I(N_c > 0) (1/N_c) sum_{n in D_c} l_n."""
    total = 0.0
    for domain, count in zip(masks.domains, masks.counts):
        total += float(np.sum(losses[masks.domain_of == domain])) / count
    return total


def domain_mean_losses(losses: np.ndarray, masks: BatchMasks) -> Dict[int, float]:
    return {
        domain: float(np.mean(losses[masks.domain_of == domain]))
        for domain in masks.domains
    }


def ctcvr_loss(
    p_ctr: np.ndarray,
    p_cvr: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    masks: BatchMasks,
    weighting: Weighting | str = Weighting.DYNAMIC,
) -> float:
    """Perte CTCVR moyenne (none) ou pondérée par N / N_c (dynamic)."""
    losses = ctcvr_instance_losses(p_ctr, p_cvr, y, z)
    if Weighting(weighting) is Weighting.NONE:
        return float(np.mean(losses))
    return float(np.mean(dynamic_weights(masks) * losses))


def combined_loss(
    p_ctr: np.ndarray,
    p_cvr: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    masks: BatchMasks,
    alpha: float,
    weighting: Weighting | str = Weighting.DYNAMIC,
) -> Tuple[LossBreakdown, LossGradients]:
    """loss_ctr + alpha * (CTCVR pondéré ou non), avec dL/dp_ctr et dL/dp_cvr."""
    weighting = Weighting(weighting)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    n = y.size

    ctr_losses = cross_entropy(p_ctr, y)
    ctcvr_losses = ctcvr_instance_losses(p_ctr, p_cvr, y, z)
    weights = dynamic_weights(masks) if weighting is Weighting.DYNAMIC else np.ones(n)

    loss_ctr = float(np.mean(ctr_losses))
    loss_ctcvr = float(np.mean(ctcvr_losses))
    loss_weighted = float(np.mean(weights * ctcvr_losses))
    ctcvr_term = loss_weighted if weighting is Weighting.DYNAMIC else loss_ctcvr
    breakdown = LossBreakdown(
        loss_ctr=loss_ctr,
        loss_ctcvr=loss_ctcvr,
        loss_ctcvr_weighted=loss_weighted,
        total=loss_ctr + alpha * ctcvr_term,
        alpha=alpha,
        weighting=weighting.value,
        domain_losses=domain_mean_losses(ctcvr_losses, masks),
    )

    q = np.asarray(p_ctr) * np.asarray(p_cvr)
    dq = alpha * weights / n * _cross_entropy_grad(q, y * z)
    grads = LossGradients(
        p_ctr=_cross_entropy_grad(p_ctr, y) / n + dq * p_cvr,
        p_cvr=dq * p_ctr,
    )
    return breakdown, grads


def cvr_only_loss(
    p_cvr: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    masks: BatchMasks,
) -> Tuple[LossBreakdown, LossGradients]:
    """Perte du DNN mono-tâche : entropie croisée de la conversion sur les clics seuls."""
    y = np.asarray(y, dtype=np.float64)
    clicked = y == 1
    n_clicked = int(clicked.sum())
    grad = np.zeros(y.size)
    loss = 0.0
    if n_clicked:
        losses = cross_entropy(p_cvr[clicked], np.asarray(z)[clicked])
        loss = float(np.mean(losses))
        grad[clicked] = _cross_entropy_grad(p_cvr[clicked], np.asarray(z)[clicked]) / n_clicked
    breakdown = LossBreakdown(
        loss_ctr=0.0, loss_ctcvr=0.0, loss_ctcvr_weighted=0.0, total=loss,
        alpha=0.0, weighting=Weighting.NONE.value, loss_cvr=loss,
    )
    return breakdown, LossGradients(p_ctr=np.zeros(y.size), p_cvr=grad)


# ==================== DIAGNOSTIC D'ÉCHELLE ====================

@dataclass
class DomainContribution:
    domain: int
    count: int
    mean_loss: float
    contribution: float
    expected: float

    @property
    def consistent(self) -> bool:
        return abs(self.contribution - self.expected) <= 1e-12 * max(1.0, abs(self.expected))


@dataclass
class LossScaleReport:
    """Contribution de chaque domaine à la perte non pondérée : (N_c / N) * moyenne."""
    batch_size: int
    unweighted_loss: float
    contributions: List[DomainContribution]

    @property
    def consistent(self) -> bool:
        return all(c.consistent for c in self.contributions)

    def contribution_of(self, domain: int) -> Optional[DomainContribution]:
        for c in self.contributions:
            if c.domain == domain:
                return c
        return None

    def lines(self, labels: Optional[Dict[int, str]] = None) -> List[str]:
        labels = labels or {}
        return [
            f"{labels.get(c.domain, c.domain)} N_c={c.count} moyenne={c.mean_loss:.6f} "
            f"contribution={c.contribution:.6f} (N_c/N={c.count / self.batch_size:.4f})"
            for c in self.contributions
        ]


def loss_scale_diagnostic(losses: np.ndarray, masks: BatchMasks) -> LossScaleReport:
    losses = np.asarray(losses, dtype=np.float64)
    n = masks.batch_size
    contributions = []
    for domain, count in zip(masks.domains, masks.counts):
        in_domain = losses[masks.domain_of == domain]
        mean = float(np.mean(in_domain))
        contributions.append(DomainContribution(
            domain=domain,
            count=count,
            mean_loss=mean,
            contribution=float(np.sum(in_domain)) / n,
            expected=count / n * mean,
        ))
    return LossScaleReport(n, float(np.mean(losses)), contributions)
