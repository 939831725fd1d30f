"""
Point d'entrée en ligne de commande.

    python cli.py gen-data SPEC OUT
    python cli.py train CONFIG
    python cli.py eval CHECKPOINT TEST
    python cli.py predict CHECKPOINT IN OUT
    python cli.py serve CHECKPOINT --port 7070
    python cli.py ablation CONFIG --modes mmn,mmn_common_params

Codes de sortie : 0 succès, 1 échec d'exécution, 2 usage ou configuration.
"""
from __future__ import annotations

import functools
import logging
import os
import sys

import click
from dotenv import load_dotenv

import checkpoint as ckpt
from config import ENV_LOG_LEVEL, ENV_SERVE_WORKERS, MODES, ConfigError, RunConfig
from data import DEFAULT_MAPPING, ParseError, SyntheticSpec, generate, load_tsv, write_atomic, write_ground_truth, write_tsv
from domains import DomainError
from evaluation import report
from features import FeatureVector, IntegrityError
from model import TrainingError
from server import DEFAULT_HOST, PredictionServer, PredictionService, format_probability
from trainer import run_ablation, train

logger = logging.getLogger("CLI")

EXIT_RUNTIME = 1
EXIT_USAGE = 2


def setup_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else os.environ.get(ENV_LOG_LEVEL, "INFO").upper()
    logging.basicConfig(level=level, format="[%(name)s] %(message)s", stream=sys.stderr, force=True)


def handle_errors(func):
    """Convertit les erreurs métier en codes de sortie."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            logger.error("Configuration invalide: %s", exc)
            sys.exit(EXIT_USAGE)
        except (TrainingError, ckpt.CheckpointError, ParseError, IntegrityError, DomainError, OSError) as exc:
            logger.error("%s", exc)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def load_checkpoint(path: str) -> ckpt.Checkpoint:
    if not os.path.isfile(path):
        logger.error("Checkpoint introuvable: %s", path)
        sys.exit(EXIT_USAGE)
    return ckpt.load(path)


def parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"Surcharge attendue sous la forme cle=valeur: {pair}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Journalisation détaillée (DEBUG)")
@click.pass_context
def cli(ctx, verbose):
    """Réseau multi-domaines masqué pour la prédiction de CVR."""
    load_dotenv()
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


@cli.command("gen-data")
@click.argument("spec_file", type=click.Path(dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), default=None,
              help="Fichier de vérité terrain (défaut: OUT_PATH.truth)")
@handle_errors
def gen_data(spec_file, out_path, truth_path):
    """Génère un journal synthétique et sa vérité terrain."""
    spec = SyntheticSpec.from_file(spec_file)
    log = generate(spec)
    write_tsv(log, out_path)
    write_ground_truth(spec, truth_path or f"{out_path}.truth")
    click.echo(f"{len(log)} enregistrements -> {out_path}")


@cli.command("train")
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, help="Surcharge cle=valeur (répétable)")
@click.pass_context
@handle_errors
def train_command(ctx, config_file, overrides):
    """Entraîne un modèle et écrit checkpoint, journal et rapport."""
    values = parse_overrides(overrides)
    if ctx.obj.get("verbose"):
        values.setdefault("verbose", "true")
    config = RunConfig.from_file(config_file, values)
    result = train(config)
    click.echo(f"Checkpoint: {result.checkpoint_path}")
    click.echo(result.report.to_text(), nl=False)


@cli.command("eval")
@click.argument("checkpoint_path", type=click.Path(dir_okay=False))
@click.argument("test_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Dossier où écrire report.txt et report.kv")
@handle_errors
def eval_command(checkpoint_path, test_path, out_dir):
    """Évalue un checkpoint sur un journal de test."""
    model = load_checkpoint(checkpoint_path).model
    log = load_tsv(test_path, model.schema, model.registry)
    metrics = report(model, log)
    if out_dir:
        write_atomic(os.path.join(out_dir, "report.txt"), metrics.to_text())
        write_atomic(os.path.join(out_dir, "report.kv"), "\n".join(metrics.to_key_values()) + "\n")
    click.echo(metrics.to_text(), nl=False)


def predict_line(model, line: str) -> str:
    """Ajoute p_ctr et p_cvr à une ligne du journal, ou ERR et la raison."""
    columns = line.split("\t")
    mapping = DEFAULT_MAPPING
    try:
        if len(columns) != mapping.expected_columns(model.num_fields):
            raise ValueError(f"{len(columns)} colonnes, {mapping.expected_columns(model.num_fields)} attendues")
        instance = FeatureVector.from_values(
            model.schema,
            [columns[c] for c in mapping.field_columns(model.num_fields)],
            model.registry.type_index(columns[mapping.type]),
            model.registry.scenario_index(columns[mapping.scenario]),
        )
        p_ctr, p_cvr = model.predict_one(instance)
    except ValueError as exc:
        return f"{line}\tERR\t{exc}"
    return f"{line}\t{format_probability(p_ctr)}\t{format_probability(p_cvr)}"


@cli.command("predict")
@click.argument("checkpoint_path", type=click.Path(dir_okay=False))
@click.argument("tsv_in", type=click.Path(dir_okay=False))
@click.argument("tsv_out", type=click.Path(dir_okay=False))
@handle_errors
def predict(checkpoint_path, tsv_in, tsv_out):
    """Prédit chaque ligne de TSV_IN (une tour par ligne) et écrit TSV_OUT."""
    model = load_checkpoint(checkpoint_path).model
    out_lines, errors = [], 0
    with open(tsv_in, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError:
                line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
                out_lines.append(f"{line}\tERR\tligne {line_no}: UTF-8 invalide")
                errors += 1
                continue
            if not line.strip() or line.startswith("#"):
                out_lines.append(line)
                continue
            result = predict_line(model, line)
            errors += result.startswith(f"{line}\tERR\t")
            out_lines.append(result)
    write_atomic(tsv_out, "".join(line + "\n" for line in out_lines))
    if errors:
        logger.warning("%d lignes en erreur", errors)
    click.echo(f"{len(out_lines)} lignes -> {tsv_out}")


@cli.command("serve")
@click.argument("checkpoint_path", type=click.Path(dir_okay=False))
@click.option("--host", default=DEFAULT_HOST, show_default=True)
@click.option("--port", type=int, default=7070, show_default=True)
@click.option("--workers", type=int, default=None, help=f"Défaut: ${ENV_SERVE_WORKERS} ou 4")
@handle_errors
def serve(checkpoint_path, host, port, workers):
    """Service de prédiction ligne par ligne (Ctrl+C pour arrêter)."""
    model = load_checkpoint(checkpoint_path).model
    if workers is None:
        raw = os.environ.get(ENV_SERVE_WORKERS, "4")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"{ENV_SERVE_WORKERS} invalide: {raw!r}") from None
    server = PredictionServer(PredictionService(model), host, port, workers)
    server.serve_forever()
    click.echo(server.service.metrics.summary_line())


@cli.command("ablation")
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--modes", default="mmn,mmn_common_params", show_default=True,
              help=f"Modes séparés par des virgules parmi: {', '.join(MODES)}")
@click.option("--plot", "plot_path", type=click.Path(dir_okay=False), default=None,
              help="Graphique PNG des écarts d'AUC")
@click.option("--set", "overrides", multiple=True, help="Surcharge cle=valeur (répétable)")
@handle_errors
def ablation(config_file, modes, plot_path, overrides):
    """Entraîne plusieurs variantes sur les mêmes données et compare les AUC."""
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    unknown = [m for m in mode_list if m not in MODES]
    if unknown:
        raise ConfigError(f"Modes inconnus: {', '.join(unknown)}")
    if len(mode_list) < 2:
        raise ConfigError("Au moins deux modes sont nécessaires")
    config = RunConfig.from_file(config_file, parse_overrides(overrides))
    result = run_ablation(config, mode_list, plot_path)
    click.echo(result.to_text(), nl=False)


if __name__ == "__main__":
    cli()
