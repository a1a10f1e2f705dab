"""
Utility functions for armaxlab.
Includes logging, operation tracking and JSON helpers.
"""

import json
import logging
import time
from datetime import datetime, timezone
from typing import Any, Dict

import numpy as np
import structlog

from armaxlab.config import settings


def configure_logging(level: str = settings.log_level, fmt: str = settings.log_format) -> None:
    """Configure structured logging for the whole package."""
    logging.basicConfig(format="%(message)s", level=getattr(logging, level.upper(), logging.INFO))
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))

    renderer = (
        structlog.dev.ConsoleRenderer()
        if fmt.lower() == "console"
        else structlog.processors.JSONRenderer()
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


configure_logging()


def get_logger(name: str):
    """Get a structured logger instance."""
    return structlog.get_logger(name)


def log_operation(operation: str, component: str, data: Dict[str, Any], level: str = "INFO"):
    """Log an operation with structured data."""
    logger = get_logger(component)

    log_data = {
        "operation": operation,
        "component": component,
        **{key: to_jsonable(value) for key, value in data.items()}
    }

    if level.upper() == "ERROR":
        logger.error("Operation failed", **log_data)
    elif level.upper() == "WARNING":
        logger.warning("Operation warning", **log_data)
    else:
        logger.info("Operation completed", **log_data)


def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and scalars into plain JSON types."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def safe_json_dumps(data: Any) -> str:
    """Serialize data to deterministic, indented JSON."""
    return json.dumps(to_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False)


def get_current_timestamp() -> str:
    """Get current UTC timestamp in ISO format."""
    return datetime.now(timezone.utc).isoformat()


class Timer:
    """Context manager for timing operations."""

    def __init__(self, name: str = "operation"):
        self.name = name
        self.start_time = None
        self.elapsed = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed = time.perf_counter() - self.start_time
        get_logger("timer").debug("Timed operation", name=self.name, seconds=round(self.elapsed, 6))
