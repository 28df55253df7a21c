"""
Structured Logging Configuration

Human-readable logs for interactive runs, JSON lines for pipelines that
ship logs elsewhere. Every pipeline run carries a correlation id; stage
and scene context can be attached temporarily with LogContext.

Logs go to stderr so command summaries on stdout stay machine-readable.
"""

import json
import logging
import logging.handlers
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

# LogRecord attributes that are not user-supplied context
_RESERVED = frozenset(
    {
        "name", "msg", "args", "created", "filename", "funcName", "levelname",
        "levelno", "lineno", "module", "msecs", "message", "pathname", "process",
        "processName", "relativeCreated", "thread", "threadName", "exc_info",
        "exc_text", "stack_info", "taskName", "asctime",
    }
)


class JSONFormatter(logging.Formatter):
    """Format log records as one JSON object per line."""

    def format(self, record: logging.LogRecord) -> str:
        log_data: Dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if record.exc_info:
            log_data["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": traceback.format_exception(*record.exc_info),
            }

        # correlation_id, stage, scene_id, counts passed through extra=...
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                log_data[key] = value

        return json.dumps(log_data, default=str)


class CorrelationFilter(logging.Filter):
    """Stamp records with a correlation id unless they already carry one."""

    def __init__(self, correlation_id: Optional[str] = None):
        super().__init__()
        self.correlation_id = correlation_id

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "correlation_id") and self.correlation_id:
            record.correlation_id = self.correlation_id
        return True


def setup_logging(
    log_level: str = "INFO",
    log_format: str = "text",
    log_file: Optional[str] = None,
    max_bytes: int = 20 * 1024 * 1024,
    backup_count: int = 5,
    enable_console: bool = True,
    correlation_id: Optional[str] = None,
) -> None:
    """
    Configure the root logger.

    Args:
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        log_format: "text" or "json"
        log_file: Optional rotating log file path
        max_bytes: Rotation size of the log file
        backup_count: Number of rotated files kept
        enable_console: Log to stderr
        correlation_id: Stamped on every record that has none
    """
    level = getattr(logging, log_level.upper())
    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    if log_format == "json":
        formatter: logging.Formatter = JSONFormatter()
    else:
        formatter = logging.Formatter(
            fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )

    if enable_console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            filename=log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    if correlation_id:
        for handler in root_logger.handlers:
            handler.addFilter(CorrelationFilter(correlation_id))

    # Pillow logs every plugin import at DEBUG
    logging.getLogger("PIL").setLevel(logging.WARNING)


def get_logger(
    name: str,
    correlation_id: Optional[str] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> logging.LoggerAdapter:
    """
    Logger adapter carrying a correlation id and fixed context.

    Example:
        >>> logger = get_logger(__name__, correlation_id="abc-123")
        >>> logger.info("Chipping scene")
    """
    context = dict(extra or {})
    if correlation_id:
        context["correlation_id"] = correlation_id
    return _MergingAdapter(logging.getLogger(name), context)


class _MergingAdapter(logging.LoggerAdapter):
    """LoggerAdapter that merges per-call extra with the adapter context."""

    def process(self, msg, kwargs):
        kwargs["extra"] = {**self.extra, **kwargs.get("extra", {})}
        return msg, kwargs


def log_performance(
    logger: logging.LoggerAdapter,
    operation: str,
    duration_ms: float,
    extra: Optional[Dict[str, Any]] = None,
) -> None:
    """Log the duration of an operation together with its counters."""
    log_data = {"operation": operation, "duration_ms": round(duration_ms, 2)}
    if extra:
        log_data.update(extra)
    logger.info(f"{operation} completed in {duration_ms:.2f}ms", extra=log_data)


class LogContext:
    """
    Temporarily stamp every record reaching the root handlers with extra attributes.

    Example:
        >>> with LogContext(stage="chip", scene_id="s1"):
        ...     chip_scene(...)
    """

    def __init__(self, **context):
        self.context = context
        self._filter = _StaticFieldsFilter(context)
        self._handlers: List[logging.Handler] = []

    def __enter__(self):
        self._handlers = list(logging.getLogger().handlers)
        for handler in self._handlers:
            handler.addFilter(self._filter)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        for handler in self._handlers:
            handler.removeFilter(self._filter)
        self._handlers = []


class _StaticFieldsFilter(logging.Filter):
    def __init__(self, fields: Dict[str, Any]):
        super().__init__()
        self.fields = fields

    def filter(self, record: logging.LogRecord) -> bool:
        for key, value in self.fields.items():
            setattr(record, key, value)
        return True
