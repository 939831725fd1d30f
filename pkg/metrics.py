from __future__ import annotations

import threading
from typing import Any, Dict, List, Optional

import numpy as np


class LatencyMetrics:
    """Collecteur des latences de prédiction du service (thread-safe)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._durations: List[float] = []
        self._global: Dict[str, Any] = {
            "total_requests": 0,
            "total_success": 0,
            "total_failure": 0,
            "last_error": None,
        }

    def reset(self) -> None:
        with self._lock:
            self._durations.clear()
            self._global.update(total_requests=0, total_success=0, total_failure=0, last_error=None)

    def record_request(self, duration: float, success: bool, error: Optional[str] = None) -> None:
        """Enregistre une requête traitée (durée en secondes)."""
        with self._lock:
            self._global["total_requests"] += 1
            self._durations.append(duration)
            if success:
                self._global["total_success"] += 1
            else:
                self._global["total_failure"] += 1
                self._global["last_error"] = error

    def summary(self) -> Dict[str, Any]:
        """Compteurs et latences en millisecondes (moyenne, p50, p99, max)."""
        with self._lock:
            durations = np.array(self._durations, dtype=np.float64) * 1000.0
            data = dict(self._global)
        if durations.size:
            data.update(
                mean_ms=float(durations.mean()),
                p50_ms=float(np.percentile(durations, 50)),
                p99_ms=float(np.percentile(durations, 99)),
                max_ms=float(durations.max()),
            )
        else:
            data.update(mean_ms=None, p50_ms=None, p99_ms=None, max_ms=None)
        return data

    def summary_line(self) -> str:
        data = self.summary()
        if data["p50_ms"] is None:
            return f"{data['total_requests']} requêtes"
        return (f"{data['total_requests']} requêtes ({data['total_failure']} en erreur), "
                f"p50={data['p50_ms']:.3f} ms, p99={data['p99_ms']:.3f} ms, max={data['max_ms']:.3f} ms")
