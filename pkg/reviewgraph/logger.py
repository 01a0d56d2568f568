#!/usr/bin/env python
"""logger.py: Sets up logger for debugging and run-time metadata.

The level is read from ``REVIEWGRAPH_LOG_LEVEL`` (default ``INFO``). A daily
rotating log file is added only when ``REVIEWGRAPH_LOG_FILE`` is set.
"""

import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler
from typing import Optional

LOG_LEVEL_ENV = "REVIEWGRAPH_LOG_LEVEL"
LOG_FILE_ENV = "REVIEWGRAPH_LOG_FILE"


def setup_logger(name: Optional[str] = None) -> logging.Logger:
    logger = logging.getLogger(name)
    if not logger.handlers:  # Prevent duplicate handlers in multi-import scenarios
        handlers = [logging.StreamHandler(sys.stdout)]
        log_file = os.environ.get(LOG_FILE_ENV)
        if log_file:
            handlers.append(
                TimedRotatingFileHandler(log_file, when="d", interval=1, backupCount=7)
            )
        formatter = logging.Formatter(
            "%(asctime)s [%(levelname)s] %(name)s: %(message)s", "%Y-%m-%d %H:%M:%S"
        )
        for handler in handlers:
            handler.setFormatter(formatter)
            logger.addHandler(handler)
        logger.setLevel(os.environ.get(LOG_LEVEL_ENV, "INFO").upper())
        logger.propagate = False
    return logger
