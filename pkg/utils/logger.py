"""Shared `posterior_control` logger for the data layer and the experiment tools."""
import logging
import multiprocessing
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from config.settings import LOGS_DIR

LOGGER_NAME = "posterior_control"
LOG_FILE = "pc.log"


def _is_main_process() -> bool:
    try:
        return multiprocessing.current_process().name == 'MainProcess'
    except (AttributeError, RuntimeError):
        return True


def build_logger(logs_dir: Optional[Path] = None, level: int = logging.INFO) -> logging.Logger:
    """Console on stdout plus a rotating `pc.log`; rebuilding replaces the handlers.

    The logger does not propagate, so run_pc's root handlers never print its lines a second time.
    """
    logs_dir = Path(logs_dir or LOGS_DIR)
    log = logging.getLogger(LOGGER_NAME)
    log.setLevel(level)
    log.propagate = False
    for handler in list(log.handlers):
        handler.close()
        log.removeHandler(handler)

    console = logging.StreamHandler(sys.stdout)
    console.setLevel(level)
    console.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                                           datefmt='%Y-%m-%d %H:%M:%S'))
    log.addHandler(console)

    # decode workers must not race on rotation
    if _is_main_process():
        logs_dir.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(logs_dir / LOG_FILE, maxBytes=10*1024*1024, backupCount=5,
                                           encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        log.addHandler(file_handler)
    return log


logger = build_logger()
