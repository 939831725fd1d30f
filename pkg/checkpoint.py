"""
Format binaire des checkpoints.

    MMNCKPT\\0 | version (uint32 LE) | longueur de l'en-tête (uint64 LE)
    | en-tête JSON UTF-8 (clés triées) | tableaux float64 little-endian

L'en-tête décrit le modèle (registre, mode, N_t, N_s, L, dimensions), le pas,
les hyperparamètres Adagrad et la liste ordonnée des tableaux avec leurs
formes. Le contenu ne dépend que des valeurs : deux entraînements identiques
produisent des fichiers identiques à l'octet près.
"""
from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from data import write_atomic
from domains import DomainRegistry
from features import EmbeddingTable
from model import MmnModel, ModelMode
from network import AdagradState, ParamSet, TowerArchitecture

logger = logging.getLogger("CKPT")

MAGIC = b"MMNCKPT\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Checkpoint absent, tronqué ou incompatible."""


@dataclass
class Checkpoint:
    model: MmnModel
    optimizer: AdagradState
    step: int = 0
    epoch: int = 0


def _param_arrays(prefix: str, params: ParamSet) -> List[Tuple[str, np.ndarray]]:
    named = []
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        named.append((f"{prefix}.w{l}", w))
        named.append((f"{prefix}.b{l}", b))
    return named


def _named_arrays(model: MmnModel, optimizer: AdagradState) -> List[Tuple[str, np.ndarray]]:
    named = [
        ("embedding.weights", model.embedding.weights),
        ("embedding.accum", model.embedding.adagrad_accum),
    ]
    for key, params in model.param_groups().items():
        named.extend(_param_arrays(key, params))
    for key, params in model.param_groups().items():
        named.extend(_param_arrays(f"adagrad.{key}", optimizer.slot(key, params)))
    return named


def to_bytes(checkpoint: Checkpoint) -> bytes:
    model, optimizer = checkpoint.model, checkpoint.optimizer
    named = _named_arrays(model, optimizer)
    header = {
        "model": model.describe(),
        "num_types": model.registry.num_types,
        "num_scenarios": model.registry.num_scenarios,
        "num_layers": model.cvr_arch.num_layers,
        "step": checkpoint.step,
        "epoch": checkpoint.epoch,
        "learning_rate": optimizer.learning_rate,
        "epsilon": optimizer.epsilon,
        "arrays": [[name, list(array.shape)] for name, array in named],
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)), header_bytes]
    parts.extend(np.ascontiguousarray(array, dtype="<f8").tobytes() for _, array in named)
    return b"".join(parts)


def save(checkpoint: Checkpoint, path: str) -> None:
    """Écriture atomique (fichier temporaire puis renommage)."""
    payload = to_bytes(checkpoint)
    write_atomic(path, payload)
    logger.info("Checkpoint écrit: %s (pas %d, %d octets)", path, checkpoint.step, len(payload))


def from_bytes(payload: bytes, source: str = "<memoire>") -> Checkpoint:
    if len(payload) < _PREFIX.size:
        raise CheckpointError(f"Checkpoint tronqué: {source}")
    magic, version, header_len = _PREFIX.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError(f"Fichier non reconnu comme checkpoint: {source}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Version de checkpoint non supportée: {version}")
    offset = _PREFIX.size
    try:
        header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"En-tête illisible dans {source}: {exc}") from None
    offset += header_len

    arrays: Dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + size > len(payload):
            raise CheckpointError(f"Checkpoint tronqué ({name}): {source}")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset) \
            .astype(np.float64).reshape(shape)
        offset += size
    if offset != len(payload):
        raise CheckpointError(f"Octets en trop dans {source}")
    return _rebuild(header, arrays)


def _load_params(arrays: Dict[str, np.ndarray], prefix: str, num_layers: int) -> ParamSet:
    try:
        return ParamSet(
            [arrays[f"{prefix}.w{l}"] for l in range(num_layers + 1)],
            [arrays[f"{prefix}.b{l}"] for l in range(num_layers + 1)],
        )
    except KeyError as exc:
        raise CheckpointError(f"Tableau manquant: {exc}") from None


def _rebuild(header: Dict, arrays: Dict[str, np.ndarray]) -> Checkpoint:
    desc = header["model"]
    mode = ModelMode(desc["mode"])
    registry = DomainRegistry(tuple(desc["registry"]["types"]), tuple(desc["registry"]["scenarios"]))
    num_layers = header["num_layers"]
    layer_units = tuple(desc["layer_units"])
    dim = desc["embedding_dim"]

    embedding = EmbeddingTable(desc["num_slots"], dim, arrays["embedding.weights"], arrays["embedding.accum"])
    base = _load_params(arrays, "base", num_layers)
    cvr_arch = TowerArchitecture(base.weights[0].shape[0], layer_units)
    ctr_arch, ctr_tower = None, None
    if mode.has_ctr_tower:
        ctr_tower = _load_params(arrays, "ctr", num_layers)
        ctr_arch = TowerArchitecture(ctr_tower.weights[0].shape[0], layer_units)
    type_sets, scenario_sets = [], []
    if mode.has_domain_params:
        type_sets = [_load_params(arrays, f"type.{i}", num_layers) for i in range(registry.num_types)]
        scenario_sets = [_load_params(arrays, f"scenario.{j}", num_layers) for j in range(registry.num_scenarios)]

    model = MmnModel(registry, desc["num_fields"], mode, embedding, cvr_arch, base, ctr_arch, ctr_tower,
                     type_sets, scenario_sets, desc["ctr_domain_features"], desc["schema"])
    optimizer = AdagradState(header["learning_rate"], header["epsilon"])
    for key in model.param_groups():
        optimizer.accumulators[key] = _load_params(arrays, f"adagrad.{key}", num_layers)
    return Checkpoint(model, optimizer, header["step"], header["epoch"])


def load(path: str) -> Checkpoint:
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint introuvable: {path}")
    with open(path, "rb") as f:
        payload = f.read()
    checkpoint = from_bytes(payload, path)
    logger.info("Checkpoint chargé: %s (mode %s, pas %d)", path,
                checkpoint.model.mode.value, checkpoint.step)
    return checkpoint
