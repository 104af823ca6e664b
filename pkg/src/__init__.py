# src/__init__.py

import logging
import os
import sys

import structlog

structlog.configure(
    processors=[
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.add_log_level,
        structlog.processors.format_exc_info,
        structlog.processors.JSONRenderer(),
    ],
    # stdout belongs to the worker wire protocol
    logger_factory=structlog.PrintLoggerFactory(sys.stderr),
    wrapper_class=structlog.make_filtering_bound_logger(
        getattr(logging, os.getenv('FK_LOG_LEVEL', 'info').upper(), logging.INFO)
    ),
)

logger = structlog.get_logger()
