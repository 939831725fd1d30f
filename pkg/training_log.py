"""
Journal d'entraînement : un événement JSON par ligne, clés triées, noms de
champs stables (event, epoch, step, loss_ctr, loss_ctcvr, ...).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional


class TrainingEvent(Enum):
    """Type d'un événement du journal."""
    START = "start"
    AUDIT = "audit"
    EPOCH = "epoch"
    CHECKPOINT = "checkpoint"
    EARLY_STOP = "early_stop"
    ABORT = "abort"
    END = "end"


@dataclass
class TrainingRecord:
    """Une ligne du journal."""
    event: str
    epoch: Optional[int] = None
    step: Optional[int] = None
    loss_ctr: Optional[float] = None
    loss_ctcvr: Optional[float] = None
    loss_ctcvr_weighted: Optional[float] = None
    loss_total: Optional[float] = None
    valid_avg_auc: Optional[float] = None
    reference_p_ctr: Optional[float] = None
    reference_p_cvr: Optional[float] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Champs renseignés uniquement (les None sont omis)."""
        data = {key: value for key, value in asdict(self).items() if value is not None}
        if not self.details:
            data.pop("details", None)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainingRecord":
        return cls(**data)


def _encode(value: Any) -> Any:
    # NaN (p_ctr du mode dnn) n'est pas du JSON valide
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    return value


class TrainingLogger:
    """Écrit les événements au fil de l'eau ; le fichier est recréé à l'ouverture."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._records: List[TrainingRecord] = []
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", encoding="utf-8"):
                pass

    def log(self, event: TrainingEvent | str, **fields: Any) -> TrainingRecord:
        record = TrainingRecord(event=TrainingEvent(event).value, **fields)
        self._records.append(record)
        if self.path:
            line = json.dumps(_encode(record.to_dict()), sort_keys=True, ensure_ascii=False)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        return record

    @property
    def records(self) -> List[TrainingRecord]:
        return list(self._records)

    def events(self, event: TrainingEvent | str) -> List[TrainingRecord]:
        wanted = TrainingEvent(event).value
        return [r for r in self._records if r.event == wanted]


def read_training_log(path: str) -> List[TrainingRecord]:
    with open(path, "r", encoding="utf-8") as f:
        return [TrainingRecord.from_dict(json.loads(line)) for line in f if line.strip()]
