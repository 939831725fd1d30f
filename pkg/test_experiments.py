"""
Expériences de bout en bout sur journaux synthétiques (lentes : pytest -m slow).
"""
import socket
import statistics
import time

import numpy as np

import pytest

from config import RunConfig
from domains import DomainRegistry
from model import MmnModel
from server import PredictionServer, PredictionService
from trainer import run_ablation

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)


def _spec(write_file, name, seed, **extra):
    values = {
        "num_types": 8,
        "num_scenarios": 4,
        "num_instances": 200000,
        "num_fields": 4,
        "vocab_size": 30,
        "seed": seed,
        "cvr_bias": -1.0,
        "type_offset_span": 4.0,
        "scenario_offset_span": 3.0,
    }
    values.update(extra)
    return write_file(name, "".join(f"{key}={value}\n" for key, value in values.items()))


def _ablation(write_file, tmp_path, seed, modes=("mmn", "mmn_common_params"), **extra):
    spec = _spec(write_file, f"spec_{seed}.conf", seed, **extra)
    config = RunConfig(seed=seed, synthetic_spec=spec, layer_units=(16, 8), embedding_dim=4, num_slots=4096,
                       batch_size=512, epochs=3, output_dir=str(tmp_path / f"ablation_{modes[1]}_{seed}"))
    return run_ablation(config, list(modes))


def test_domain_parameters_beat_shared_tower(write_file, tmp_path):
    deltas = [_ablation(write_file, tmp_path, seed).deltas["1_mmn_common_params"]["average"] for seed in SEEDS]
    assert statistics.median(deltas) >= 0.01


def test_minority_domains_gain_under_majority_skew(write_file, tmp_path):
    deltas = [
        _ablation(write_file, tmp_path, seed, ("mmn", "mmn_no_dynamic_weight"), majority_share=0.8)
        .deltas["1_mmn_no_dynamic_weight"]["minority_average"]
        for seed in SEEDS
    ]
    assert statistics.median(deltas) >= 0.005


def test_socket_request_latency():
    registry = DomainRegistry(tuple(f"t{i}" for i in range(8)), tuple(f"s{j}" for j in range(4)))
    model = MmnModel.create(registry, 8, layer_units=(32, 16), embedding_dim=4, num_slots=1 << 16, seed=0,
                            schema=tuple(f"f{k}" for k in range(8)))
    server = PredictionServer(PredictionService(model), port=0, num_workers=2)
    server.start()
    round_trips = []
    try:
        with socket.create_connection(("127.0.0.1", server.port), timeout=5) as conn, \
                conn.makefile("rb") as reader:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            for n in range(10000):
                values = "\t".join(f"v{(n * 7 + k) % 50}" for k in range(8))
                started = time.perf_counter()
                conn.sendall(f"r{n}\tt{n % 8}\ts{n % 4}\t{values}\n".encode("utf-8"))
                answer = reader.readline()
                round_trips.append(time.perf_counter() - started)
                assert answer.startswith(f"r{n}\t".encode("utf-8"))
                assert b"\tERR\t" not in answer
    finally:
        server.stop()
    summary = server.service.metrics.summary()
    assert summary["total_requests"] == 10000
    assert summary["total_failure"] == 0
    assert summary["p99_ms"] < 5.0
    assert float(np.percentile(np.array(round_trips) * 1000.0, 99)) < 5.0
