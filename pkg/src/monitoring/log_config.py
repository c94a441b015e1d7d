import logging
import os
import sys
from typing import Optional

from pythonjsonlogger.json import JsonFormatter

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
JSON_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def configure_logging(level: Optional[str] = None, json_logs: bool = False) -> logging.Logger:
    """Point the root logger at stderr; LOG_LEVEL applies when no level is given"""
    level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter(JSON_FORMAT) if json_logs else logging.Formatter(TEXT_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.INFO))
    # third-party chatter
    for noisy in ("matplotlib", "PIL", "trimesh"):
        logging.getLogger(noisy).setLevel(logging.WARNING)
    return root
