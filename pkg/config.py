"""
Configuration d'une exécution : fichiers texte ``cle=valeur`` (commentaires #)
lus avec python-dotenv, convertis en dataclasses figées.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

# Variables d'environnement du processus (chargées depuis .env par le CLI)
ENV_LOG_LEVEL = "MMN_LOG_LEVEL"
ENV_SERVE_WORKERS = "MMN_SERVE_WORKERS"

MODES = ("mmn", "mmn_common_params", "mmn_no_dynamic_weight", "esmm", "dnn")


class ConfigError(ValueError):
    """Configuration invalide (clé inconnue, valeur mal formée, chemin absent)."""


def read_key_values(path: str) -> Dict[str, str]:
    """Lit un fichier ``cle=valeur`` ; les clés sans valeur sont refusées."""
    if not os.path.isfile(path):
        raise ConfigError(f"Fichier de configuration introuvable: {path}")
    values = dotenv_values(path, interpolate=False)
    missing = [key for key, value in values.items() if value is None]
    if missing:
        raise ConfigError(f"Clés sans valeur dans {path}: {', '.join(missing)}")
    return {key.strip().lower(): value.strip() for key, value in values.items()}


def parse_value(key: str, raw: str, convert: Callable[[str], Any]) -> Any:
    try:
        return convert(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Valeur invalide pour '{key}': {raw!r} ({exc})") from None


def parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on", "oui"):
        return True
    if lowered in ("0", "false", "no", "off", "non"):
        return False
    raise ValueError("booléen attendu")


def parse_list(convert: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    def parser(raw: str) -> Tuple[Any, ...]:
        items = [item.strip() for item in raw.split(",") if item.strip()]
        return tuple(convert(item) for item in items)
    return parser


def _optional(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def parser(raw: str) -> Any:
        return None if raw.strip() == "" else convert(raw)
    return parser


def build_dataclass(cls, values: Mapping[str, str], parsers: Mapping[str, Callable[[str], Any]], source: str):
    """Instancie ``cls`` à partir de valeurs brutes ; toute clé inconnue est une erreur."""
    unknown = sorted(set(values) - set(parsers))
    if unknown:
        raise ConfigError(f"Clés inconnues dans {source}: {', '.join(unknown)}")
    kwargs = {key: parse_value(key, raw, parsers[key]) for key, raw in values.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"Configuration incomplète ({source}): {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    """Paramètres d'un entraînement (données, registre, modèle, optimisation, sorties)."""
    seed: int
    train_path: Optional[str] = None
    synthetic_spec: Optional[str] = None
    test_path: Optional[str] = None
    schema: Tuple[str, ...] = ()
    types: Tuple[str, ...] = ()
    scenarios: Tuple[str, ...] = ()
    mode: str = "mmn"
    layer_units: Tuple[int, ...] = (32, 16)
    embedding_dim: int = 4
    num_slots: int = 1 << 16
    ctr_domain_features: bool = False
    alpha: float = 1.0
    learning_rate: float = 0.05
    epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 5
    patience: int = 2
    train_fraction: float = 0.7
    output_dir: str = "run"
    column_click: Optional[int] = None
    column_conversion: Optional[int] = None
    column_type: Optional[int] = None
    column_scenario: Optional[int] = None
    column_fields: Tuple[int, ...] = ()
    constant_click: Optional[int] = None
    verbose: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Mode inconnu: {self.mode}. Modes: {', '.join(MODES)}")
        if bool(self.train_path) == bool(self.synthetic_spec):
            raise ConfigError("Indiquer exactement une source: train_path ou synthetic_spec")
        if self.train_path and not self.schema:
            raise ConfigError("schema requis avec train_path")
        if bool(self.types) != bool(self.scenarios):
            raise ConfigError("types et scenarios se déclarent ensemble (ou pas du tout)")
        checks = {
            "embedding_dim": self.embedding_dim >= 1,
            "num_slots": self.num_slots >= 1,
            "batch_size": self.batch_size >= 1,
            "epochs": self.epochs >= 0,
            "patience": self.patience >= 1,
            "learning_rate": self.learning_rate > 0,
            "epsilon": self.epsilon >= 0,
            "alpha": self.alpha >= 0,
            "train_fraction": 0.0 < self.train_fraction < 1.0,
            "layer_units": bool(self.layer_units) and min(self.layer_units) >= 1,
        }
        invalid = [key for key, ok in checks.items() if not ok]
        if invalid:
            raise ConfigError(f"Valeurs hors domaine: {', '.join(invalid)}")

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """Charge et valide ; les chemins relatifs sont résolus depuis le dossier du fichier."""
        values = read_key_values(path)
        values.update({key.lower(): str(value) for key, value in (overrides or {}).items()})
        config = build_dataclass(cls, values, _RUN_PARSERS, path)
        return config.resolve_paths(os.path.dirname(os.path.abspath(path)))

    def resolve_paths(self, base_dir: str) -> "RunConfig":
        updates = {}
        for key in ("train_path", "synthetic_spec", "test_path", "output_dir"):
            value = getattr(self, key)
            if value and not os.path.isabs(value):
                updates[key] = os.path.normpath(os.path.join(base_dir, value))
        resolved = replace(self, **updates)
        for key in ("train_path", "synthetic_spec", "test_path"):
            value = getattr(resolved, key)
            if value and not os.path.isfile(value):
                raise ConfigError(f"Chemin introuvable pour '{key}': {value}")
        return resolved

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.output_dir, "model.ckpt")

    @property
    def log_path(self) -> str:
        return os.path.join(self.output_dir, "train.log.jsonl")

    @property
    def report_path(self) -> str:
        return os.path.join(self.output_dir, "report.txt")

    @property
    def report_kv_path(self) -> str:
        return os.path.join(self.output_dir, "report.kv")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_RUN_PARSERS: Dict[str, Callable[[str], Any]] = {
    "seed": int,
    "train_path": _optional(str),
    "synthetic_spec": _optional(str),
    "test_path": _optional(str),
    "schema": parse_list(str),
    "types": parse_list(str),
    "scenarios": parse_list(str),
    "mode": str,
    "layer_units": parse_list(int),
    "embedding_dim": int,
    "num_slots": int,
    "ctr_domain_features": parse_bool,
    "alpha": float,
    "learning_rate": float,
    "epsilon": float,
    "batch_size": int,
    "epochs": int,
    "patience": int,
    "train_fraction": float,
    "output_dir": str,
    "column_click": _optional(int),
    "column_conversion": _optional(int),
    "column_type": _optional(int),
    "column_scenario": _optional(int),
    "column_fields": parse_list(int),
    "constant_click": _optional(int),
    "verbose": parse_bool,
}

assert set(_RUN_PARSERS) == {f.name for f in fields(RunConfig)}
