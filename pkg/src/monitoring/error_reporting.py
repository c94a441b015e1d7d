import json
import logging
import math
import time
import traceback
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Dict, List, Optional

import psutil

from src.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class FailureContext:
    """Context information for a per-subject failure"""
    timestamp: str
    subject_id: str
    stage: str
    error_type: str
    message: str
    stack_trace: Optional[str] = None


@dataclass
class PerformanceMetrics:
    """Timing and resource usage of one named operation"""
    operation_name: str
    start_time: float
    end_time: Optional[float] = None
    duration: Optional[float] = None
    rss_start: int = 0
    rss_end: int = 0
    steps: List[Dict] = field(default_factory=list)
    status: str = "running"


class FailureReporter:
    """Collects per-subject failures of a batch command and enforces the failure policy.

    A batch tolerates failing subjects up to ``max_fraction`` of ``total``;
    beyond that ``check_policy`` raises a DataError listing the failures.
    """

    def __init__(self, total: int, max_fraction: float = 0.10, max_stored: int = 100):
        self.total = total
        self.max_fraction = max_fraction
        self.max_stored = max_stored
        self.error_counts: Dict[str, int] = {}
        self.failures: List[FailureContext] = []
        self.failed_ids: List[str] = []

    def report_failure(self, subject_id: str, error: Exception, stage: str, with_trace: bool = False):
        context = FailureContext(
            timestamp=datetime.now().isoformat(),
            subject_id=subject_id,
            stage=stage,
            error_type=type(error).__name__,
            message=str(error),
            stack_trace="".join(traceback.format_exception(type(error), error, error.__traceback__))
            if with_trace else None,
        )
        logger.error(json.dumps(asdict(context)))
        self.error_counts[context.error_type] = self.error_counts.get(context.error_type, 0) + 1
        self.failed_ids.append(subject_id)
        self.failures.append(context)
        if len(self.failures) > self.max_stored:
            self.failures.pop(0)

    @property
    def failure_count(self) -> int:
        return len(self.failed_ids)

    @property
    def allowed_failures(self) -> int:
        return math.floor(self.max_fraction * self.total + 1e-9)

    def get_failure_stats(self) -> Dict:
        return {
            "total": self.total,
            "failed": self.failure_count,
            "failed_ids": sorted(self.failed_ids),
            "error_counts": dict(sorted(self.error_counts.items())),
            "recent_failures": [
                {"subject_id": f.subject_id, "stage": f.stage, "error_type": f.error_type, "message": f.message}
                for f in self.failures[-10:]
            ],
        }

    def check_policy(self):
        if self.failure_count > self.allowed_failures:
            raise DataError(
                f"{self.failure_count} of {self.total} subjects failed "
                f"(limit {self.allowed_failures}): {sorted(self.failed_ids)}"
            )
        if self.failure_count:
            logger.warning(f"{self.failure_count} of {self.total} subjects failed and were excluded")


class PerformanceMonitor:
    """Times named operations and tracks resident memory with psutil"""

    def __init__(self):
        self.active_operations: Dict[str, PerformanceMetrics] = {}
        self.completed_operations: List[PerformanceMetrics] = []
        self.process = psutil.Process()
        self.peak_rss = self.process.memory_info().rss

    def _sample_rss(self) -> int:
        rss = self.process.memory_info().rss
        self.peak_rss = max(self.peak_rss, rss)
        return rss

    def start_operation(self, operation_name: str) -> str:
        self.active_operations[operation_name] = PerformanceMetrics(
            operation_name=operation_name,
            start_time=time.perf_counter(),
            rss_start=self._sample_rss(),
        )
        logger.debug(f"Started monitoring operation: {operation_name}")
        return operation_name

    def log_step(self, operation_name: str, step_name: str):
        if operation_name not in self.active_operations:
            logger.warning(f"Operation not found: {operation_name}")
            return
        metrics = self.active_operations[operation_name]
        metrics.steps.append({
            "name": step_name,
            "elapsed": time.perf_counter() - metrics.start_time,
            "rss": self._sample_rss(),
        })

    def end_operation(self, operation_name: str, status: str = "completed") -> Optional[PerformanceMetrics]:
        if operation_name not in self.active_operations:
            logger.warning(f"Operation not found: {operation_name}")
            return None
        metrics = self.active_operations.pop(operation_name)
        metrics.end_time = time.perf_counter()
        metrics.duration = metrics.end_time - metrics.start_time
        metrics.rss_end = self._sample_rss()
        metrics.status = status
        self.completed_operations.append(metrics)
        logger.debug(f"Operation {operation_name} {status} in {metrics.duration:.3f}s")
        return metrics

    @contextmanager
    def track(self, operation_name: str):
        self.start_operation(operation_name)
        try:
            yield
        except BaseException:
            self.end_operation(operation_name, status="failed")
            raise
        self.end_operation(operation_name)

    def get_metrics(self, operation_name: Optional[str] = None) -> Dict:
        if operation_name:
            if operation_name in self.active_operations:
                return asdict(self.active_operations[operation_name])
            for op in reversed(self.completed_operations):
                if op.operation_name == operation_name:
                    return asdict(op)
            return {}
        return {
            "active": {name: asdict(m) for name, m in self.active_operations.items()},
            "completed": [asdict(m) for m in self.completed_operations[-10:]],
            "peak_rss": self.peak_rss,
        }

    def clear_history(self):
        self.completed_operations = []
