"""
Orchestration d'un entraînement : chargement d'un unique journal mélangeant
tous les domaines, boucle d'époques, validation, arrêt anticipé,
checkpoint du meilleur modèle et pilotage des ablations.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import checkpoint as ckpt
from config import RunConfig
from data import (
    DEFAULT_MAPPING,
    ColumnMapping,
    ConversionLog,
    SyntheticSpec,
    batches,
    generate,
    load_tsv,
    write_atomic,
)
from domains import DomainRegistry
from evaluation import MetricsReport, report
from loss import ctcvr_instance_losses, loss_scale_diagnostic
from model import MmnModel, TrainingError
from training_log import TrainingEvent, TrainingLogger

logger = logging.getLogger("TRAIN")


TRAIN_PHASE = "train"
TEST_PHASE = "test"


@dataclass
class DatasetAudit:
    """Fichiers de données ouverts par le pipeline, par phase (entraînement, test)."""
    entries: List[Tuple[str, str]] = field(default_factory=list)

    def record(self, source: str, phase: str = TRAIN_PHASE) -> None:
        self.entries.append((phase, source))

    def sources(self, phase: str = TRAIN_PHASE) -> List[str]:
        return [source for entry_phase, source in self.entries if entry_phase == phase]

    @property
    def opened(self) -> List[str]:
        return self.sources(TRAIN_PHASE)

    @property
    def count(self) -> int:
        """Nombre de sources ouvertes pour l'entraînement (test exclu)."""
        return len(self.opened)


@dataclass
class TrainResult:
    config: RunConfig
    model: MmnModel
    report: MetricsReport
    best_epoch: int
    best_valid_auc: Optional[float]
    epochs_run: int
    steps: int
    audit: DatasetAudit
    training_log: TrainingLogger = field(repr=False)

    @property
    def checkpoint_path(self) -> str:
        return self.config.checkpoint_path


def column_mapping(config: RunConfig) -> ColumnMapping:
    """Correspondance de colonnes (défaut si aucune colonne n'est configurée)."""
    overrides = {
        "conversion": config.column_conversion,
        "type": config.column_type,
        "scenario": config.column_scenario,
    }
    overrides = {key: value for key, value in overrides.items() if value is not None}
    if config.column_fields:
        overrides["fields"] = tuple(config.column_fields)
    if config.constant_click is not None:
        overrides["click"] = None
        overrides["constant_click"] = config.constant_click
    elif config.column_click is not None:
        overrides["click"] = config.column_click
    return replace(DEFAULT_MAPPING, **overrides) if overrides else DEFAULT_MAPPING


def declared_registry(config: RunConfig) -> Optional[DomainRegistry]:
    if config.types:
        return DomainRegistry(config.types, config.scenarios)
    return None


def load_training_log(config: RunConfig, audit: DatasetAudit) -> ConversionLog:
    """Une seule source de données, quel que soit le nombre de domaines."""
    if config.synthetic_spec:
        spec = SyntheticSpec.from_file(config.synthetic_spec)
        audit.record(config.synthetic_spec)
        return generate(spec)
    audit.record(config.train_path)
    return load_tsv(config.train_path, config.schema, declared_registry(config), column_mapping(config))


def load_test_log(config: RunConfig, registry: DomainRegistry, schema: Sequence[str],
                  audit: Optional[DatasetAudit] = None) -> ConversionLog:
    if audit is not None:
        audit.record(config.test_path, TEST_PHASE)
    return load_tsv(config.test_path, schema, registry, column_mapping(config))


def _validation_score(auc: Optional[float]) -> float:
    return -math.inf if auc is None else auc


def _save(model: MmnModel, optimizer, step: int, epoch: int, config: RunConfig,
          reference: Optional[ConversionLog], training_log: TrainingLogger, valid_auc: Optional[float]) -> None:
    ckpt.save(ckpt.Checkpoint(model, optimizer, step, epoch), config.checkpoint_path)
    fields = {"epoch": epoch, "step": step, "valid_avg_auc": valid_auc}
    if reference is not None and len(reference):
        fields["reference_p_ctr"], fields["reference_p_cvr"] = model.predict_one(reference.records[0])
    training_log.log(TrainingEvent.CHECKPOINT, **fields)


def train(config: RunConfig) -> TrainResult:
    """
    Entraîne selon ``config`` ; déterministe pour une graine donnée.

    Le meilleur checkpoint (AUC moyenne de validation) est conservé ; en cas de
    perte non finie, l'entraînement s'interrompt et le dernier checkpoint valide
    reste en place.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    training_log = TrainingLogger(config.log_path)
    audit = DatasetAudit()

    full_log = load_training_log(config, audit)
    if len(full_log) == 0:
        raise ValueError("Journal d'entraînement vide")
    train_log, valid_log = full_log.split(config.train_fraction)
    registry = full_log.registry
    training_log.log(TrainingEvent.START, details={
        "mode": config.mode,
        "seed": config.seed,
        "train": len(train_log),
        "valid": len(valid_log),
        "num_types": registry.num_types,
        "num_scenarios": registry.num_scenarios,
    })
    training_log.log(TrainingEvent.AUDIT, details={"datasets": list(audit.opened), "dataset_count": audit.count})
    logger.info("Jeux de données ouverts: %d (%s)", audit.count, ", ".join(audit.opened))

    model = MmnModel.create(
        registry,
        num_fields=len(full_log.schema),
        mode=config.mode,
        layer_units=config.layer_units,
        embedding_dim=config.embedding_dim,
        num_slots=config.num_slots,
        seed=config.seed,
        ctr_domain_features=config.ctr_domain_features,
        schema=full_log.schema,
    )
    optimizer = model.create_optimizer(config.learning_rate, config.epsilon)
    train_encoded = train_log.encode(config.num_slots)
    valid_encoded = valid_log.encode(config.num_slots)
    labels = {d: registry.domain_label(d) for d in range(registry.num_domains)}

    _save(model, optimizer, 0, 0, config, train_log, training_log, None)
    best_score, best_auc, best_epoch = -math.inf, None, 0
    step, epochs_run, bad_epochs = 0, 0, 0

    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(4)
        n_batches = 0
        for batch in batches(train_encoded, config.batch_size, config.seed, epoch):
            step += 1
            diagnose = config.verbose and logger.isEnabledFor(logging.DEBUG)
            if diagnose:
                # Prédictions avant la mise à jour, celles qui produisent la perte du pas
                p_ctr, p_cvr = model.predict_batch(batch)
            try:
                breakdown = model.train_step(batch, optimizer, config.alpha, step)
            except TrainingError as exc:
                training_log.log(TrainingEvent.ABORT, epoch=epoch, step=exc.step, details={"error": str(exc)})
                logger.error("Entraînement interrompu: %s", exc)
                raise
            sums += (breakdown.loss_ctr, breakdown.loss_ctcvr, breakdown.loss_ctcvr_weighted, breakdown.total)
            n_batches += 1
            if diagnose:
                losses = ctcvr_instance_losses(p_ctr, p_cvr, batch.clicks, batch.conversions)
                for line in loss_scale_diagnostic(losses, batch.masks).lines(labels):
                    logger.debug("pas %d %s", step, line)
        epochs_run = epoch

        means = sums / max(n_batches, 1)
        valid_auc = report(model, valid_encoded).average_auc if len(valid_encoded) else None
        training_log.log(
            TrainingEvent.EPOCH, epoch=epoch, step=step,
            loss_ctr=float(means[0]), loss_ctcvr=float(means[1]),
            loss_ctcvr_weighted=float(means[2]), loss_total=float(means[3]),
            valid_avg_auc=valid_auc,
        )
        logger.info("Époque %d: perte=%.6f ctr=%.6f ctcvr=%.6f auc_valid=%s", epoch, means[3],
                    means[0], means[1], "NA" if valid_auc is None else f"{valid_auc:.4f}")

        score = _validation_score(valid_auc)
        if score > best_score or best_epoch == 0:
            best_score, best_auc, best_epoch, bad_epochs = score, valid_auc, epoch, 0
            _save(model, optimizer, step, epoch, config, train_log, training_log, valid_auc)
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                training_log.log(TrainingEvent.EARLY_STOP, epoch=epoch, step=step)
                logger.info("Arrêt anticipé après %d époques sans amélioration", bad_epochs)
                break

    best = ckpt.load(config.checkpoint_path).model
    if config.test_path:
        test_log = load_test_log(config, registry, full_log.schema, audit)
        logger.info("Jeu de test ouvert après l'entraînement: %s", config.test_path)
        metrics = report(best, test_log)
    else:
        metrics = report(best, valid_encoded if len(valid_encoded) else train_encoded)
    write_report(metrics, config)
    training_log.log(TrainingEvent.END, epoch=best_epoch, step=step, valid_avg_auc=best_auc)
    return TrainResult(config, best, metrics, best_epoch, best_auc, epochs_run, step, audit, training_log)


def write_report(metrics: MetricsReport, config: RunConfig) -> None:
    write_atomic(config.report_path, metrics.to_text())
    write_atomic(config.report_kv_path, "\n".join(metrics.to_key_values()) + "\n")


# ==================== ABLATIONS ====================

@dataclass
class AblationResult:
    """Écarts d'AUC de la première variante par rapport à chacune des autres."""
    modes: List[str]
    reports: List[MetricsReport]
    deltas: Dict[str, Dict[str, Optional[float]]]

    def to_text(self) -> str:
        reference = self.modes[0]
        out = []
        for other, groups in self.deltas.items():
            out.append(f"# {reference} - {other}")
            width = max(len(key) for key in groups) if groups else 0
            for key, value in groups.items():
                out.append(f"{key:<{width}}  {'NA' if value is None else f'{value:+.4f}'}")
            out.append("")
        return "\n".join(out)


def _group_aucs(metrics: MetricsReport) -> Dict[str, Optional[float]]:
    groups: Dict[str, Optional[float]] = {"average": metrics.average_auc, "minority_average": metrics.minority_average_auc}
    groups.update({f"type.{k}": v for k, v in metrics.type_auc.items()})
    groups.update({f"scenario.{k}": v for k, v in metrics.scenario_auc.items()})
    groups.update({f"domain.{k}": v for k, v in metrics.domain_auc.items()})
    return groups


def auc_deltas(reference: MetricsReport, other: MetricsReport) -> Dict[str, Optional[float]]:
    ref_groups, other_groups = _group_aucs(reference), _group_aucs(other)
    return {
        key: None if value is None or other_groups.get(key) is None else value - other_groups[key]
        for key, value in ref_groups.items()
    }


def run_ablation(config: RunConfig, modes: Sequence[str], plot_path: Optional[str] = None) -> AblationResult:
    """Entraîne chaque variante sur les mêmes données et la même graine."""
    if len(modes) < 2:
        raise ValueError("Au moins deux modes sont nécessaires pour une ablation")
    reports = []
    for index, mode in enumerate(modes):
        run_config = replace(config, mode=mode, output_dir=os.path.join(config.output_dir, f"{index}_{mode}"))
        logger.info("Ablation %d/%d: %s", index + 1, len(modes), mode)
        reports.append(train(run_config).report)
    deltas = {
        f"{index}_{mode}": auc_deltas(reports[0], other)
        for index, (mode, other) in enumerate(zip(modes, reports)) if index > 0
    }
    result = AblationResult(list(modes), reports, deltas)
    write_atomic(os.path.join(config.output_dir, "ablation.txt"), result.to_text())
    if plot_path:
        plot_deltas(result, plot_path)
    return result


def plot_deltas(result: AblationResult, path: str) -> bool:
    """Diagramme en barres des écarts par type et par scénario ; False sans matplotlib."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib indisponible, pas de graphique")
        return False

    fig, axes = plt.subplots(len(result.deltas), 1, figsize=(10, 3 * len(result.deltas)), squeeze=False)
    for ax, (other, groups) in zip(axes[:, 0], result.deltas.items()):
        keys = [k for k, v in groups.items() if v is not None and (k.startswith("type.") or k.startswith("scenario."))]
        values = [groups[k] for k in keys]
        ax.bar(range(len(keys)), values, color=["tab:green" if v >= 0 else "tab:red" for v in values])
        ax.set_xticks(range(len(keys)))
        ax.set_xticklabels(keys, rotation=60, ha="right", fontsize=7)
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_title(f"{result.modes[0]} - {other}")
        ax.set_ylabel("écart d'AUC")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True
