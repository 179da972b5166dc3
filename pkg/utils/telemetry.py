import atexit
import json
import logging
import os
import socket
import threading
import time
import uuid
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, List, Optional

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from config.telemetry_config import get_telemetry_settings

logger = logging.getLogger(__name__)

VERSION = "0.3.0"


class TelemetryLogger:
    """Structured experiment events, batched to a Splunk HEC and/or a local JSON-lines file."""

    def __init__(
        self,
        hec_url: str = "",
        hec_token: str = "",
        index: str = "main",
        sourcetype_prefix: str = "circsense",
        batch_size: int = 25,
        flush_interval: float = 5.0,
        enabled: bool = False,
        event_log: str = "",
    ):
        self.hec_url = hec_url
        self.hec_token = hec_token
        self.index = index
        self.sourcetype_prefix = sourcetype_prefix
        self.batch_size = max(1, batch_size)
        self.flush_interval = flush_interval
        self.enabled = enabled
        self.event_log = event_log
        self.hostname = socket.gethostname()

        self._lock = threading.Lock()
        self._batch: List[Dict[str, Any]] = []
        self._last_flush_time = time.time()
        self._session: Optional[requests.Session] = None

        if self.event_log:
            self._ensure_dir(self.event_log)
            logger.debug("TelemetryLogger writing events to %s", self.event_log)
        if self.enabled:
            self._session = self._create_session()
            logger.info("TelemetryLogger shipping to HEC: index=%s, batch_size=%d", index, self.batch_size)

    @property
    def active(self) -> bool:
        return self.enabled or bool(self.event_log)

    def _create_session(self) -> requests.Session:
        session = requests.Session()
        retry_strategy = Retry(
            total=3,
            backoff_factor=2,
            status_forcelist=[429, 500, 502, 503, 504],
            allowed_methods=["POST"],
        )
        adapter = HTTPAdapter(max_retries=retry_strategy, pool_connections=2, pool_maxsize=4)
        session.mount("http://", adapter)
        session.mount("https://", adapter)
        session.headers.update({
            "Authorization": f"Splunk {self.hec_token}",
            "Content-Type": "application/json",
        })
        return session

    @staticmethod
    def _ensure_dir(path: str) -> None:
        folder = os.path.dirname(path)
        if not folder:
            return
        try:
            os.makedirs(folder, exist_ok=True)
        except OSError as e:
            logger.error(f"Failed to create event log directory: {e}")

    def _flush_locked(self) -> None:
        if not self._batch:
            return
        batch = self._batch.copy()
        self._batch.clear()
        self._last_flush_time = time.time()

        # Release lock before network or disk I/O
        try:
            self._lock.release()
            self._deliver(batch)
        finally:
            self._lock.acquire()

    def _deliver(self, events: List[Dict[str, Any]]) -> None:
        if self.enabled and self._session is not None:
            try:
                payload = "\n".join(json.dumps(event) for event in events)
                response = self._session.post(self.hec_url, data=payload, timeout=10)
                if response.status_code == 200:
                    logger.debug(f"Sent {len(events)} events to HEC")
                    return
                logger.error(f"HEC rejected events: {response.status_code} - {response.text}")
            except requests.exceptions.RequestException as e:
                logger.error(f"Failed to send events to HEC: {e}")
        self._write_local(events)

    def _write_local(self, events: List[Dict[str, Any]]) -> None:
        if not self.event_log:
            return
        try:
            with open(self.event_log, "a", encoding="utf-8") as f:
                for event in events:
                    f.write(json.dumps(event, sort_keys=True) + "\n")
        except OSError as e:
            logger.error(f"Failed to write event log: {e}")

    def _create_event(
        self,
        category: str,
        event_type: str,
        payload: Dict[str, Any],
        severity: str = "info",
        run_id: Optional[str] = None,
        component: Optional[str] = None,
        metrics: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        event = {
            "time": time.time(),
            "host": self.hostname,
            "source": "circsense",
            "sourcetype": f"{self.sourcetype_prefix}:{category}",
            "index": self.index,
            "event": {
                "timestamp": datetime.now().isoformat(),
                "run_id": run_id or str(uuid.uuid4()),
                "event_category": category,
                "event_type": event_type,
                "severity": severity,
                "component": component or "unknown",
                "payload": payload,
                "context": {"version": VERSION},
            },
        }
        if metrics:
            event["event"]["metrics"] = metrics
        return event

    def log_event(
        self,
        category: str,
        event_type: str,
        payload: Dict[str, Any],
        severity: str = "info",
        run_id: Optional[str] = None,
        component: Optional[str] = None,
        metrics: Optional[Dict[str, Any]] = None,
    ) -> None:
        if not self.active:
            return
        try:
            event = self._create_event(
                category=category,
                event_type=event_type,
                payload=payload,
                severity=severity,
                run_id=run_id,
                component=component,
                metrics=metrics,
            )
            with self._lock:
                self._batch.append(event)
                due = (time.time() - self._last_flush_time) >= self.flush_interval
                if len(self._batch) >= self.batch_size or due:
                    self._flush_locked()
        except Exception as e:
            # Telemetry must never break a computation
            logger.error(f"Failed to record telemetry event: {e}")

    def log_solve(
        self,
        *,
        status: str,
        iterations: int,
        objective: float,
        gap: float,
        duration_ms: float,
        shape: tuple[int, int],
        q: float,
        run_id: Optional[str] = None,
    ) -> None:
        self.log_event(
            category="solver",
            event_type="bpdn_solve",
            payload={"status": status, "m": shape[0], "n": shape[1], "q": str(q)},
            severity="info" if status == "converged" else "warning",
            run_id=run_id,
            component="pdhg",
            metrics={
                "iterations": iterations,
                "objective": objective,
                "gap": gap,
                "duration_ms": duration_ms,
            },
        )

    def log_trial(
        self,
        *,
        n: int,
        m: int,
        s: int,
        seed: int,
        success: bool,
        rel_l2: float,
        iterations: int,
        run_id: Optional[str] = None,
    ) -> None:
        self.log_event(
            category="experiment",
            event_type="trial",
            payload={"n": n, "m": m, "s": s, "seed": seed, "success": success},
            severity="info",
            run_id=run_id,
            component="harness",
            metrics={"rel_l2": rel_l2, "iterations": iterations},
        )

    @contextmanager
    def timed_operation(
        self,
        category: str,
        event_type: str,
        *,
        payload: Optional[Dict[str, Any]] = None,
        run_id: Optional[str] = None,
        component: Optional[str] = None,
    ):
        start = time.perf_counter()
        try:
            yield
        finally:
            duration_ms = (time.perf_counter() - start) * 1000
            self.log_event(
                category=category,
                event_type=event_type,
                payload=dict(payload or {}),
                run_id=run_id,
                component=component,
                metrics={"duration_ms": duration_ms},
            )

    def flush(self) -> None:
        """Force delivery of all pending events."""
        with self._lock:
            self._flush_locked()

    def close(self) -> None:
        self.flush()
        if self._session is not None:
            self._session.close()
            self._session = None


_telemetry_instance: Optional[TelemetryLogger] = None
_instance_lock = threading.Lock()


def get_telemetry_logger() -> TelemetryLogger:
    global _telemetry_instance

    with _instance_lock:
        if _telemetry_instance is None:
            settings = get_telemetry_settings()
            _telemetry_instance = TelemetryLogger(
                hec_url=str(settings["hec_url"]),
                hec_token=str(settings["hec_token"]),
                index=str(settings["index"]),
                sourcetype_prefix=str(settings["sourcetype_prefix"]),
                batch_size=int(settings["batch_size"]),
                flush_interval=float(settings["flush_interval"]),
                enabled=bool(settings["enabled"]),
                event_log=str(settings["event_log"]),
            )

    return _telemetry_instance


def _cleanup_logger() -> None:
    if _telemetry_instance is not None:
        _telemetry_instance.close()


atexit.register(_cleanup_logger)
