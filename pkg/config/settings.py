"""Filesystem settings."""
from pathlib import Path

# Base directory for the project
BASE_DIR = Path(__file__).resolve().parent.parent

# Corpus files (train/valid/test JSONL)
DATA_DIR = BASE_DIR / "pc_data"

# Checkpoints
MODELS_DIR = BASE_DIR / "pc_models"

LOGS_DIR = BASE_DIR / "logs"
