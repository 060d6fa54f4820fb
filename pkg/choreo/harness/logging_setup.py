"""Logging bootstrap for command-line runs."""

import logging
import os
import sys
from typing import Optional

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


def configure_logging(level: str = 'INFO', log_path: Optional[str] = None) -> None:
    """
    Send records to stderr and, when ``log_path`` is given, to that file.

    The file is opened lazily, so a run that never logs leaves no file.
    """
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_path:
        directory = os.path.dirname(log_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.append(logging.FileHandler(log_path, delay=True))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
