"""
Journaux de conversion : lecture/écriture TSV, découpage, mini-batchs et
générateur synthétique multi-domaines.

Format TSV (UTF-8, une ligne par impression, lignes '#' ignorées) :
    y <TAB> z <TAB> code_type <TAB> code_scenario <TAB> champ_1 ... champ_F
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import qmc

from config import ConfigError, build_dataclass, parse_list, read_key_values
from domains import BatchMasks, DomainError, DomainRegistry, compute_masks, dynamic_weights
from features import (
    DEFAULT_NUM_SLOTS,
    SCENARIO_FIELD,
    TYPE_FIELD,
    FeatureVector,
    IntegrityError,
    hash_feature,
)
from tensor import logit, make_rng, sigmoid

logger = logging.getLogger("DATA")

MAX_REPORTED_ERRORS = 10


class ParseError(ValueError):
    """Ligne TSV mal formée ; ``lines`` contient les (numéro, raison)."""

    def __init__(self, message: str, lines: Sequence[Tuple[int, str]] = ()):
        super().__init__(message)
        self.lines = list(lines)


def _problem_message(prefix: str, problems: Sequence[Tuple[int, str]]) -> str:
    shown = "; ".join(f"ligne {n}: {reason}" for n, reason in problems[:MAX_REPORTED_ERRORS])
    more = len(problems) - MAX_REPORTED_ERRORS
    return f"{prefix} ({len(problems)}) - {shown}" + (f" (+{more} autres)" if more > 0 else "")


# ==================== JOURNAL ====================

@dataclass
class ConversionLog:
    """Un seul jeu de données mélangeant tous les domaines."""
    schema: Tuple[str, ...]
    registry: Optional[DomainRegistry]
    records: List[FeatureVector] = field(repr=False)
    source: str = "memoire"
    _encoded: Dict[int, "EncodedLog"] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)

    def __len__(self) -> int:
        return len(self.records)

    def split(self, fraction: float = 0.7) -> Tuple["ConversionLog", "ConversionLog"]:
        """Découpage déterministe par index d'enregistrement (premiers ``fraction`` en entraînement)."""
        cut = int(round(len(self.records) * fraction))
        return (
            ConversionLog(self.schema, self.registry, self.records[:cut], f"{self.source}[:{cut}]"),
            ConversionLog(self.schema, self.registry, self.records[cut:], f"{self.source}[{cut}:]"),
        )

    def encode(self, num_slots: int = DEFAULT_NUM_SLOTS) -> "EncodedLog":
        if num_slots not in self._encoded:
            self._encoded[num_slots] = EncodedLog.from_records(self.records, self.registry, num_slots)
        return self._encoded[num_slots]

    def domain_counts(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for r in self.records:
            domain = self.registry.domain_index(r.type_id, r.scenario_id)
            counts[domain] = counts.get(domain, 0) + 1
        return counts


@dataclass(frozen=True)
class ColumnMapping:
    """
    Position des colonnes dans un export TSV.

    Par défaut : y, z, type, scénario puis les champs du schéma. Pour un export
    ne contenant que des clics (ex: Criteo sponsored search), ``click=None`` et
    ``constant_click=1``.
    """
    click: Optional[int] = 0
    conversion: int = 1
    type: int = 2
    scenario: int = 3
    fields: Tuple[int, ...] = ()
    constant_click: int = 1
    strict: bool = True

    def field_columns(self, num_fields: int) -> Tuple[int, ...]:
        if self.fields:
            if len(self.fields) != num_fields:
                raise ConfigError(f"{len(self.fields)} colonnes de champs pour un schéma de {num_fields}")
            return self.fields
        return tuple(range(4, 4 + num_fields))

    def expected_columns(self, num_fields: int) -> int:
        used = [self.conversion, self.type, self.scenario, *self.field_columns(num_fields)]
        if self.click is not None:
            used.append(self.click)
        return max(used) + 1


DEFAULT_MAPPING = ColumnMapping()


def load_tsv(
    path: str,
    schema: Sequence[str],
    registry: Optional[DomainRegistry] = None,
    mapping: ColumnMapping = DEFAULT_MAPPING,
) -> ConversionLog:
    """
    Charge et valide un journal TSV.

    Le registre est déduit des codes rencontrés s'il n'est pas fourni ; un
    journal vide sans registre déclaré n'en a pas (``registry`` vaut None).

    Raises:
        ParseError: nombre de colonnes ou labels invalides (avec numéros de ligne)
        IntegrityError: z=1 avec y=0
        DomainError: code absent du registre fourni
    """
    schema = tuple(schema)
    field_columns = mapping.field_columns(len(schema))
    expected = mapping.expected_columns(len(schema))
    rows: List[Tuple[int, int, int, str, str, Tuple[str, ...]]] = []
    parse_problems: List[Tuple[int, str]] = []
    integrity_problems: List[Tuple[int, str]] = []

    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError as exc:
                parse_problems.append((line_no, f"UTF-8 invalide ({exc.reason})"))
                continue
            if not line.strip() or line.startswith("#"):
                continue
            columns = line.split("\t")
            if len(columns) < expected or (mapping.strict and len(columns) != expected):
                parse_problems.append((line_no, f"{len(columns)} colonnes, {expected} attendues"))
                continue
            try:
                y = mapping.constant_click if mapping.click is None else _binary(columns[mapping.click])
                z = _binary(columns[mapping.conversion])
            except ValueError as exc:
                parse_problems.append((line_no, str(exc)))
                continue
            if z == 1 and y == 0:
                integrity_problems.append((line_no, "conversion sans clic"))
                continue
            rows.append((line_no, y, z, columns[mapping.type], columns[mapping.scenario],
                         tuple(columns[c] for c in field_columns)))

    if parse_problems:
        raise ParseError(_problem_message(f"Lignes mal formées dans {path}", parse_problems), parse_problems)
    if integrity_problems:
        raise IntegrityError(_problem_message(f"Enregistrements incohérents dans {path}", integrity_problems))

    if registry is None:
        if not rows:
            logger.info("Journal vide: %s", path)
            return ConversionLog(schema, None, [], source=path)
        registry = DomainRegistry.infer((r[3], r[4]) for r in rows)
    records = []
    for line_no, y, z, type_code, scenario_code, values in rows:
        try:
            type_id = registry.type_index(type_code)
            scenario_id = registry.scenario_index(scenario_code)
        except DomainError as exc:
            raise DomainError(f"{path}, ligne {line_no}: {exc}") from None
        records.append(FeatureVector.from_values(schema, values, type_id, scenario_id, y, z))

    logger.info("%d enregistrements chargés depuis %s (%d types, %d scénarios)",
                len(records), path, registry.num_types, registry.num_scenarios)
    return ConversionLog(schema, registry, records, source=path)


def _binary(raw: str) -> int:
    if raw not in ("0", "1"):
        raise ValueError(f"label binaire attendu, reçu {raw!r}")
    return int(raw)


def format_record(record: FeatureVector, registry: DomainRegistry) -> str:
    values = record.values
    for value in values:
        if "\t" in value or "\n" in value:
            raise ValueError(f"Valeur de champ non sérialisable: {value!r}")
    return "\t".join((
        str(record.click),
        str(record.conversion),
        registry.type_code(record.type_id),
        registry.scenario_code(record.scenario_id),
        *values,
    ))


def write_atomic(path: str, content: Union[str, bytes]) -> None:
    """Écrit un fichier (texte UTF-8 ou binaire) de façon atomique (fichier temporaire + renommage)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        if isinstance(content, bytes):
            with os.fdopen(fd, "wb") as f:
                f.write(content)
        else:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                f.write(content)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_tsv(log: ConversionLog, path: str) -> None:
    lines = [format_record(r, log.registry) for r in log.records]
    write_atomic(path, "".join(line + "\n" for line in lines))
    logger.info("%d enregistrements écrits dans %s", len(lines), path)


# ==================== ENCODAGE ET MINI-BATCHS ====================

def encode_records(
    records: Sequence[FeatureVector],
    registry: DomainRegistry,
    num_slots: int,
) -> np.ndarray:
    """
    Slots hachés (N, F + 2) : les F champs du schéma puis le type et le
    scénario comme deux champs virtuels (utilisés par les modes esmm/dnn).
    """
    n_fields = len(records[0].field_values) if records else 0
    slots = np.empty((len(records), n_fields + 2), dtype=np.int64)
    for n, record in enumerate(records):
        registry.check_ids(record.type_id, record.scenario_id)
        for k, (name, value) in enumerate(record.field_values):
            slots[n, k] = hash_feature(name, value, num_slots)
        slots[n, n_fields] = hash_feature(TYPE_FIELD, registry.types[record.type_id], num_slots)
        slots[n, n_fields + 1] = hash_feature(SCENARIO_FIELD, registry.scenarios[record.scenario_id], num_slots)
    return slots


@dataclass
class MiniBatch:
    """N instances : slots, labels, domaines, masques et poids dynamiques."""
    slots: np.ndarray = field(repr=False)
    type_ids: np.ndarray = field(repr=False)
    scenario_ids: np.ndarray = field(repr=False)
    clicks: np.ndarray = field(repr=False)
    conversions: np.ndarray = field(repr=False)
    masks: BatchMasks = field(repr=False)
    weights: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.type_ids.size)

    @classmethod
    def build(
        cls,
        slots: np.ndarray,
        type_ids: Sequence[int],
        scenario_ids: Sequence[int],
        clicks: Sequence[int],
        conversions: Sequence[int],
        registry: DomainRegistry,
        indices: Optional[Sequence[int]] = None,
    ) -> "MiniBatch":
        type_ids = np.asarray(type_ids, dtype=np.int64)
        if type_ids.size == 0:
            raise ValueError("Mini-batch vide")
        masks = compute_masks(type_ids, scenario_ids, registry)
        return cls(
            slots=np.asarray(slots, dtype=np.int64),
            type_ids=type_ids,
            scenario_ids=np.asarray(scenario_ids, dtype=np.int64),
            clicks=np.asarray(clicks, dtype=np.int64),
            conversions=np.asarray(conversions, dtype=np.int64),
            masks=masks,
            weights=dynamic_weights(masks),
            indices=np.arange(type_ids.size) if indices is None else np.asarray(indices, dtype=np.int64),
        )

    @classmethod
    def from_records(cls, records: Sequence[FeatureVector], registry: DomainRegistry,
                     num_slots: int = DEFAULT_NUM_SLOTS) -> "MiniBatch":
        return cls.build(
            encode_records(records, registry, num_slots),
            [r.type_id for r in records],
            [r.scenario_id for r in records],
            [r.click for r in records],
            [r.conversion for r in records],
            registry,
        )


@dataclass
class EncodedLog:
    """Journal pré-haché sous forme de tableaux (un seul hachage par exécution)."""
    registry: DomainRegistry
    num_slots: int
    slots: np.ndarray = field(repr=False)
    type_ids: np.ndarray = field(repr=False)
    scenario_ids: np.ndarray = field(repr=False)
    clicks: np.ndarray = field(repr=False)
    conversions: np.ndarray = field(repr=False)

    @classmethod
    def from_records(cls, records: Sequence[FeatureVector], registry: DomainRegistry, num_slots: int) -> "EncodedLog":
        return cls(
            registry=registry,
            num_slots=num_slots,
            slots=encode_records(records, registry, num_slots),
            type_ids=np.array([r.type_id for r in records], dtype=np.int64),
            scenario_ids=np.array([r.scenario_id for r in records], dtype=np.int64),
            clicks=np.array([r.click for r in records], dtype=np.int64),
            conversions=np.array([r.conversion for r in records], dtype=np.int64),
        )

    def __len__(self) -> int:
        return int(self.type_ids.size)

    def batch(self, indices: np.ndarray) -> MiniBatch:
        return MiniBatch.build(
            self.slots[indices], self.type_ids[indices], self.scenario_ids[indices],
            self.clicks[indices], self.conversions[indices], self.registry, indices,
        )


def batches(
    log: Union[ConversionLog, EncodedLog],
    batch_size: int,
    shuffle_seed: Optional[int] = None,
    epoch: int = 0,
    num_slots: int = DEFAULT_NUM_SLOTS,
) -> Iterator[MiniBatch]:
    """
    Flux de mini-batchs mélangeant tous les domaines (aucun pré-partitionnement).

    Le mélange dépend seulement de (shuffle_seed, epoch) ; sans graine, l'ordre
    du journal est conservé. Le dernier batch partiel est émis.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size doit être >= 1, reçu {batch_size}")
    encoded = log.encode(num_slots) if isinstance(log, ConversionLog) else log
    n = len(encoded)
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = make_rng([shuffle_seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield encoded.batch(order[start:start + batch_size])


# ==================== GÉNÉRATEUR SYNTHÉTIQUE ====================

@dataclass(frozen=True)
class SyntheticSpec:
    """
    Paramètres d'un journal synthétique à vérité terrain additive en log-odds.

    y ~ B(sigma(base_ctr_logit + ctr_feature_weight * phi_ctr(x)))
    z | y=1 ~ B(sigma(cvr_bias + feature_weight * phi(x) + u_i + v_j))
    """
    num_types: int = 2
    num_scenarios: int = 2
    num_instances: int = 1000
    num_fields: int = 6
    vocab_size: int = 50
    seed: int = 0
    base_ctr_logit: float = 0.0
    ctr_feature_weight: float = 1.0
    cvr_bias: float = -1.0
    feature_weight: float = 1.0
    type_offsets: Tuple[float, ...] = ()
    scenario_offsets: Tuple[float, ...] = ()
    type_offset_span: float = 3.0
    scenario_offset_span: float = 3.0
    type_cvr_min: Optional[float] = None
    type_cvr_max: Optional[float] = None
    majority_share: Optional[float] = None
    domain_weights: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.num_types < 1 or self.num_scenarios < 1:
            raise ConfigError("num_types et num_scenarios doivent être >= 1")
        if self.num_instances < 0 or self.num_fields < 1 or self.vocab_size < 1:
            raise ConfigError("num_instances >= 0, num_fields >= 1 et vocab_size >= 1 requis")
        if self.type_offsets and len(self.type_offsets) != self.num_types:
            raise ConfigError(f"{len(self.type_offsets)} décalages de type pour {self.num_types} types")
        if self.scenario_offsets and len(self.scenario_offsets) != self.num_scenarios:
            raise ConfigError(f"{len(self.scenario_offsets)} décalages de scénario pour {self.num_scenarios} scénarios")
        if (self.type_cvr_min is None) != (self.type_cvr_max is None):
            raise ConfigError("type_cvr_min et type_cvr_max vont ensemble")
        if self.type_cvr_min is not None and not 0.0 < self.type_cvr_min <= self.type_cvr_max < 1.0:
            raise ConfigError("Plage de CVR invalide (0 < min <= max < 1)")
        if self.majority_share is not None and not 0.0 < self.majority_share < 1.0:
            raise ConfigError("majority_share doit être dans ]0, 1[")
        if self.domain_weights and len(self.domain_weights) != self.num_types * self.num_scenarios:
            raise ConfigError("domain_weights doit avoir N_t x N_s valeurs")

    @classmethod
    def from_file(cls, path: str) -> "SyntheticSpec":
        return build_dataclass(cls, read_key_values(path), _SPEC_PARSERS, path)

    @property
    def schema(self) -> Tuple[str, ...]:
        return tuple(f"f{k}" for k in range(self.num_fields))

    @property
    def registry(self) -> DomainRegistry:
        return DomainRegistry(
            tuple(f"t{i}" for i in range(self.num_types)),
            tuple(f"s{j}" for j in range(self.num_scenarios)),
        )

    def resolved_type_offsets(self) -> np.ndarray:
        """u_i : explicites, ou résolus pour couvrir [type_cvr_min, type_cvr_max], ou étalés sur la plage."""
        if self.type_offsets:
            return np.array(self.type_offsets, dtype=np.float64)
        if self.type_cvr_min is not None:
            lo, hi = logit(self.type_cvr_min), logit(self.type_cvr_max)
            return _spread(lo, hi, self.num_types) - self.cvr_bias
        return _spread(-self.type_offset_span / 2, self.type_offset_span / 2, self.num_types)

    def resolved_scenario_offsets(self) -> np.ndarray:
        if self.scenario_offsets:
            return np.array(self.scenario_offsets, dtype=np.float64)
        return _spread(-self.scenario_offset_span / 2, self.scenario_offset_span / 2, self.num_scenarios)

    def mixture(self) -> np.ndarray:
        """Probabilités des N_t x N_s domaines (uniforme, explicite ou majoritaire sur le domaine 0)."""
        count = self.num_types * self.num_scenarios
        if self.domain_weights:
            weights = np.array(self.domain_weights, dtype=np.float64)
            return weights / weights.sum()
        if self.majority_share is not None and count > 1:
            probs = np.full(count, (1.0 - self.majority_share) / (count - 1))
            probs[0] = self.majority_share
            return probs
        return np.full(count, 1.0 / count)


_SPEC_PARSERS = {
    "num_types": int,
    "num_scenarios": int,
    "num_instances": int,
    "num_fields": int,
    "vocab_size": int,
    "seed": int,
    "base_ctr_logit": float,
    "ctr_feature_weight": float,
    "cvr_bias": float,
    "feature_weight": float,
    "type_offsets": parse_list(float),
    "scenario_offsets": parse_list(float),
    "type_offset_span": float,
    "scenario_offset_span": float,
    "type_cvr_min": float,
    "type_cvr_max": float,
    "majority_share": float,
    "domain_weights": parse_list(float),
}


def _spread(lo: float, hi: float, count: int) -> np.ndarray:
    if count == 1:
        return np.array([lo], dtype=np.float64)
    return np.linspace(lo, hi, count)


# Au-delà, l'espérance sur les valeurs de features passe en quasi-Monte-Carlo
TRUTH_EXACT_LIMIT = 1 << 16
TRUTH_SOBOL_LOG2 = 16


def _feature_effects(spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Effets par (champ, valeur) pour la CVR puis le CTR, premiers tirages du générateur."""
    shape = (spec.num_fields, spec.vocab_size)
    return rng.standard_normal(shape), rng.standard_normal(shape)


def _phi(effects: np.ndarray, values: np.ndarray) -> np.ndarray:
    field_index = np.arange(effects.shape[0])
    return effects[field_index, values].sum(axis=1) * (1.0 / math.sqrt(effects.shape[0]))


def _value_grid(spec: SyntheticSpec) -> np.ndarray:
    """Configurations de valeurs équiprobables : toutes si peu nombreuses, sinon points de Sobol."""
    n_fields, vocab = spec.num_fields, spec.vocab_size
    if vocab ** n_fields <= TRUTH_EXACT_LIMIT:
        axes = np.meshgrid(*[np.arange(vocab)] * n_fields, indexing="ij")
        return np.stack(axes, axis=-1).reshape(-1, n_fields)
    sampler = qmc.Sobol(d=n_fields, scramble=True, seed=make_rng([spec.seed, 1]))
    points = sampler.random_base2(TRUTH_SOBOL_LOG2)
    return np.minimum((points * vocab).astype(np.int64), vocab - 1)


def clicked_domain_cvr(spec: SyntheticSpec) -> np.ndarray:
    """
    CVR attendue parmi les impressions cliquées, par domaine (N_t, N_s).

    Espérance de sigma(b0 + w * phi(x) + u_i + v_j) sur x uniforme, pondérée
    par P(clic | x) puisque la CVR ne s'observe que sur les clics. Les effets
    de features sont ceux que ``generate(spec)`` tire avec la graine de la spec.
    """
    base = spec.cvr_bias + spec.resolved_type_offsets()[:, None] + spec.resolved_scenario_offsets()[None, :]
    if spec.feature_weight == 0.0:
        return sigmoid(base)
    cvr_effects, ctr_effects = _feature_effects(spec, make_rng(spec.seed))
    grid = _value_grid(spec)
    p_click = sigmoid(spec.base_ctr_logit + spec.ctr_feature_weight * _phi(ctr_effects, grid))
    click_weights = p_click / p_click.sum()
    shift = spec.feature_weight * _phi(cvr_effects, grid)
    out = np.empty_like(base)
    for index, logit_value in np.ndenumerate(base):
        out[index] = float(click_weights @ sigmoid(logit_value + shift))
    return out


def _mixture_average(cvr: np.ndarray, mass: np.ndarray, axis: int) -> np.ndarray:
    """Moyenne pondérée par le mélange ; moyenne simple pour un groupe sans masse."""
    total = mass.sum(axis=axis)
    weighted = (cvr * mass).sum(axis=axis)
    plain = cvr.mean(axis=axis)
    return np.where(total > 0, weighted / np.where(total > 0, total, 1.0), plain)


def ground_truth(spec: SyntheticSpec) -> Dict[str, float]:
    """
    Vérité terrain du journal ``generate(spec)`` (CVR parmi les clics).

    domain.t|s : espérance sur les features (exacte sans effet de features).
    type.X, scenario.X : marginales des CVR de domaine pondérées par le mélange,
    le clic étant indépendant du domaine.
    base.type.X : sigma(b0 + u_i), scénario et features neutres ; type_cvr_min
    et type_cvr_max en sont les extrêmes (la plage configurée si elle l'est).
    """
    registry = spec.registry
    cvr = clicked_domain_cvr(spec)
    mass = spec.mixture().reshape(registry.num_types, registry.num_scenarios)
    by_type = _mixture_average(cvr, mass, axis=1)
    by_scenario = _mixture_average(cvr, mass, axis=0)
    base_type = sigmoid(spec.cvr_bias + spec.resolved_type_offsets())

    truth: Dict[str, float] = {}
    for i, code in enumerate(registry.types):
        truth[f"type.{code}"] = float(by_type[i])
    for j, code in enumerate(registry.scenarios):
        truth[f"scenario.{code}"] = float(by_scenario[j])
    for i, t in enumerate(registry.types):
        for j, s in enumerate(registry.scenarios):
            truth[f"domain.{t}|{s}"] = float(cvr[i, j])
    for i, code in enumerate(registry.types):
        truth[f"base.type.{code}"] = float(base_type[i])
    truth["type_cvr_min"] = float(base_type.min())
    truth["type_cvr_max"] = float(base_type.max())
    return truth


def write_ground_truth(spec: SyntheticSpec, path: str) -> None:
    lines = [f"{key}={value!r}" for key, value in ground_truth(spec).items()]
    write_atomic(path, "".join(line + "\n" for line in lines))


def generate(spec: SyntheticSpec, rng: Optional[np.random.Generator] = None) -> ConversionLog:
    """Tire un journal synthétique ; z => y par construction."""
    rng = rng if rng is not None else make_rng(spec.seed)
    n, n_fields, vocab = spec.num_instances, spec.num_fields, spec.vocab_size
    registry = spec.registry

    cvr_effects, ctr_effects = _feature_effects(spec, rng)
    domains = rng.choice(registry.num_domains, size=n, p=spec.mixture())
    values = rng.integers(0, vocab, size=(n, n_fields))
    click_draws = rng.random(n)
    conversion_draws = rng.random(n)

    phi_cvr = _phi(cvr_effects, values)
    phi_ctr = _phi(ctr_effects, values)
    type_ids, scenario_ids = np.divmod(domains, registry.num_scenarios)

    u = spec.resolved_type_offsets()
    v = spec.resolved_scenario_offsets()
    p_click = sigmoid(spec.base_ctr_logit + spec.ctr_feature_weight * phi_ctr)
    p_conv = sigmoid(spec.cvr_bias + spec.feature_weight * phi_cvr + u[type_ids] + v[scenario_ids])
    clicks = (click_draws < p_click).astype(int)
    conversions = clicks * (conversion_draws < p_conv).astype(int)

    value_names = [f"v{k}" for k in range(vocab)]
    schema = spec.schema
    records = [
        FeatureVector(
            field_values=tuple((schema[k], value_names[values[m, k]]) for k in range(n_fields)),
            type_id=int(type_ids[m]),
            scenario_id=int(scenario_ids[m]),
            click=int(clicks[m]),
            conversion=int(conversions[m]),
        )
        for m in range(n)
    ]
    logger.info("%d instances synthétiques générées (%d domaines, %d clics, %d conversions)",
                n, registry.num_domains, int(clicks.sum()), int(conversions.sum()))
    return ConversionLog(schema, registry, records, source=f"synthetique:{spec.seed}")
