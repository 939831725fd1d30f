"""
Service de prédiction en ligne : protocole texte ligne par ligne sur socket
TCP local, pool de workers partageant un instantané immuable du modèle.

Requête  : id <TAB> code_type <TAB> code_scenario <TAB> champ_1 ... champ_F
Réponse  : id <TAB> p_ctr <TAB> p_cvr            (succès)
           id <TAB> ERR <TAB> raison             (échec)
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from domains import DomainError
from features import FeatureVector
from metrics import LatencyMetrics
from model import MmnModel

logger = logging.getLogger("SERVE")

DEFAULT_HOST = "127.0.0.1"
DEFAULT_WORKERS = 4
DEFAULT_QUEUE_SIZE = 64


class RequestError(ValueError):
    """Requête mal formée ou domaine inconnu ; renvoyée comme ligne ERR."""


@dataclass(frozen=True)
class PredictRequest:
    request_id: str
    type_code: str
    scenario_code: str
    values: Tuple[str, ...]

    @classmethod
    def parse(cls, line: str, num_fields: int) -> "PredictRequest":
        columns = line.rstrip("\r\n").split("\t")
        if len(columns) != 3 + num_fields:
            raise RequestError(f"{len(columns)} colonnes, {3 + num_fields} attendues")
        return cls(columns[0], columns[1], columns[2], tuple(columns[3:]))


def format_probability(p: float) -> str:
    """Représentation exacte aller-retour d'un float64."""
    return format(p, ".17g")


def request_id_of(line: str) -> str:
    return line.rstrip("\r\n").split("\t", 1)[0]


class PredictionService:
    """Traduit une ligne de requête en ligne de réponse (chemin rapide à une tour)."""

    def __init__(self, model: MmnModel, metrics: Optional[LatencyMetrics] = None):
        self.model = model
        self.metrics = metrics if metrics is not None else LatencyMetrics()

    def to_instance(self, request: PredictRequest) -> FeatureVector:
        registry = self.model.registry
        try:
            type_id = registry.type_index(request.type_code)
            scenario_id = registry.scenario_index(request.scenario_code)
        except DomainError as exc:
            raise RequestError(str(exc)) from None
        return FeatureVector.from_values(self.model.schema, request.values, type_id, scenario_id)

    def predict(self, request: PredictRequest) -> Tuple[float, float]:
        return self.model.predict_one(self.to_instance(request))

    def handle_line(self, line: str) -> str:
        started = time.perf_counter()
        request_id = request_id_of(line)
        try:
            request = PredictRequest.parse(line, self.model.num_fields)
            p_ctr, p_cvr = self.predict(request)
        except (RequestError, ValueError) as exc:
            self.metrics.record_request(time.perf_counter() - started, False, str(exc))
            reason = str(exc).replace("\t", " ").replace("\n", " ")
            return f"{request_id}\tERR\t{reason}"
        self.metrics.record_request(time.perf_counter() - started, True)
        return f"{request.request_id}\t{format_probability(p_ctr)}\t{format_probability(p_cvr)}"

    def handle_raw(self, raw: bytes) -> Optional[str]:
        """Ligne brute reçue sur la socket ; None pour une ligne vide."""
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            request_id = request_id_of(raw.decode("utf-8", errors="replace"))
            reason = f"UTF-8 invalide ({exc.reason})"
            self.metrics.record_request(0.0, False, reason)
            return f"{request_id}\tERR\t{reason}"
        if not line.strip():
            return None
        return self.handle_line(line)


class PredictionServer:
    """
    Un thread d'écoute dépose les connexions dans une file bornée ; chaque
    worker traite une connexion à la fois, ligne par ligne, dans l'ordre.
    """

    def __init__(
        self,
        service: PredictionService,
        host: str = DEFAULT_HOST,
        port: int = 0,
        num_workers: int = DEFAULT_WORKERS,
        queue_size: int = DEFAULT_QUEUE_SIZE,
    ):
        if num_workers < 1:
            raise ValueError(f"Nombre de workers invalide: {num_workers}")
        self.service = service
        self.host = host
        self.port = port
        self._num_workers = num_workers
        self._connections: "queue.Queue[socket.socket]" = queue.Queue(maxsize=queue_size)
        self._stop_event = threading.Event()
        self._threads: List[threading.Thread] = []
        self._socket: Optional[socket.socket] = None
        self._running = False

    @property
    def address(self) -> Tuple[str, int]:
        return self.host, self.port

    def start(self) -> None:
        if self._running:
            return
        self._socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._socket.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._socket.bind((self.host, self.port))
        self._socket.listen()
        self._socket.settimeout(0.5)
        self.port = self._socket.getsockname()[1]
        self._running = True
        self._stop_event.clear()

        listener = threading.Thread(target=self._accept_loop, name="ServeListener", daemon=True)
        listener.start()
        self._threads.append(listener)
        for i in range(self._num_workers):
            worker = threading.Thread(target=self._worker_loop, name=f"ServeWorker-{i}", daemon=True)
            worker.start()
            self._threads.append(worker)
        logger.info("En écoute sur %s:%d (%d workers)", self.host, self.port, self._num_workers)

    def stop(self, timeout: float = 5.0) -> None:
        if not self._running:
            return
        self._running = False
        self._stop_event.set()
        if self._socket is not None:
            self._socket.close()
        for thread in self._threads:
            thread.join(timeout=timeout)
        self._threads.clear()
        logger.info("Arrêt du service: %s", self.service.metrics.summary_line())

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop_event.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _accept_loop(self) -> None:
        while not self._stop_event.is_set():
            try:
                conn, _ = self._socket.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            while not self._stop_event.is_set():
                try:
                    self._connections.put(conn, timeout=0.5)
                    break
                except queue.Full:
                    continue
            else:
                conn.close()

    def _worker_loop(self) -> None:
        while not self._stop_event.is_set():
            try:
                conn = self._connections.get(timeout=0.5)
            except queue.Empty:
                continue
            try:
                self._handle_connection(conn)
            except OSError as exc:
                logger.warning("Connexion interrompue: %s", exc)
            except Exception:
                logger.exception("Erreur inattendue sur une connexion, le worker continue")
            finally:
                conn.close()
                self._connections.task_done()

    def _handle_connection(self, conn: socket.socket) -> None:
        conn.settimeout(None)
        # Réponses courtes : pas de regroupement Nagle
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with conn.makefile("rb") as reader, \
                conn.makefile("w", encoding="utf-8", newline="\n") as writer:
            for raw in reader:
                response = self.service.handle_raw(raw)
                if response is None:
                    continue
                writer.write(response + "\n")
                writer.flush()
