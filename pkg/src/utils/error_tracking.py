"""
Error Tracking Utilities

Classifies pipeline failures, maps them to CLI exit codes and keeps
thread-safe per-run error counts by type, category and stage.
"""

import logging
import traceback
from collections import defaultdict
from datetime import datetime, timezone
from enum import Enum
from threading import Lock
from typing import Any, Dict, Optional

from ..core.errors import ConfigError, IoFailure, TowerForgeError, ValidationError


class ErrorSeverity(Enum):
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    VALIDATION = "validation"
    FILE_IO = "file_io"
    CONFIGURATION = "configuration"
    UNKNOWN = "unknown"


EXIT_CODES = {
    ErrorCategory.VALIDATION: 2,
    ErrorCategory.CONFIGURATION: 2,
    ErrorCategory.FILE_IO: 1,
    ErrorCategory.UNKNOWN: 1,
}


class ErrorMetrics:
    """Thread-safe error counters."""

    def __init__(self):
        self._lock = Lock()
        self._error_counts: Dict[str, int] = defaultdict(int)
        self._error_by_category: Dict[str, int] = defaultdict(int)
        self._error_by_stage: Dict[str, int] = defaultdict(int)
        self._first_seen: Dict[str, str] = {}
        self._last_seen: Dict[str, str] = {}

    def record_error(
        self,
        error_type: str,
        category: ErrorCategory = ErrorCategory.UNKNOWN,
        stage: Optional[str] = None,
    ) -> None:
        with self._lock:
            now = datetime.now(timezone.utc).isoformat()
            self._error_counts[error_type] += 1
            self._error_by_category[category.value] += 1
            if stage:
                self._error_by_stage[stage] += 1
            self._first_seen.setdefault(error_type, now)
            self._last_seen[error_type] = now

    def get_metrics(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "total_errors": sum(self._error_counts.values()),
                "by_type": dict(self._error_counts),
                "by_category": dict(self._error_by_category),
                "by_stage": dict(self._error_by_stage),
                "unique_error_types": len(self._error_counts),
                "first_seen": dict(self._first_seen),
                "last_seen": dict(self._last_seen),
            }


class ErrorTracker:
    """
    Central error capture for a command run.

    Each captured exception is categorized, counted and logged with its
    stage tag; the caller gets back the exit code to report.
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.metrics = ErrorMetrics()

    def capture_exception(
        self,
        exception: BaseException,
        stage: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ) -> int:
        """
        Record an exception and return the exit code it maps to.

        Args:
            exception: The exception to capture
            stage: Pipeline stage tag such as "ingest/parse"
            context: Additional fields attached to the log record
        """
        category = categorize_exception(exception)
        severity = get_error_severity(exception)
        stage = stage or getattr(exception, "stage", None)
        error_type = type(exception).__name__
        self.metrics.record_error(error_type, category, stage)

        extra: Dict[str, Any] = {
            "error_type": error_type,
            "category": category.value,
            "severity": severity.value,
            "stage": stage,
        }
        if context:
            extra["context"] = context
        if severity is ErrorSeverity.CRITICAL or category is ErrorCategory.UNKNOWN:
            extra["traceback"] = "".join(
                traceback.format_exception(type(exception), exception, exception.__traceback__)
            )

        log_method = getattr(self.logger, severity.value, self.logger.error)
        log_method(f"[{category.value}] {error_type}: {exception}", extra=extra)
        return exit_code_for(exception)

    def get_metrics(self) -> Dict[str, Any]:
        return self.metrics.get_metrics()


def categorize_exception(exception: BaseException) -> ErrorCategory:
    """Classify an exception; only library errors count as validation or configuration problems."""
    if isinstance(exception, ConfigError):
        return ErrorCategory.CONFIGURATION
    if isinstance(exception, ValidationError):
        return ErrorCategory.VALIDATION
    if isinstance(exception, IoFailure):
        return ErrorCategory.FILE_IO
    if isinstance(exception, TowerForgeError):
        return ErrorCategory.UNKNOWN
    if isinstance(exception, OSError):
        return ErrorCategory.FILE_IO
    return ErrorCategory.UNKNOWN


def get_error_severity(exception: BaseException) -> ErrorSeverity:
    if isinstance(exception, (KeyboardInterrupt, MemoryError, SystemExit)):
        return ErrorSeverity.CRITICAL
    if isinstance(exception, ValidationError):
        return ErrorSeverity.WARNING
    return ErrorSeverity.ERROR


def exit_code_for(exception: BaseException) -> int:
    """CLI exit code: 2 for validation/config problems, 1 for I/O and anything else."""
    if isinstance(exception, TowerForgeError):
        return exception.exit_code
    return EXIT_CODES[categorize_exception(exception)]
