"""Main entry point for posterior-control training, decoding and evaluation."""
import argparse
import logging
import multiprocessing
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

from config.settings import LOGS_DIR
from pcgen.commands import COMMANDS
from pcgen.errors import PosteriorControlError

# Flag to prevent duplicate logging setup
_logging_configured = False


def setup_logging(verbose: bool = False) -> logging.Logger:
    """Setup logging (called once)."""
    global _logging_configured

    if _logging_configured:
        return logging.getLogger("main")

    LOGS_DIR.mkdir(parents=True, exist_ok=True)

    try:
        is_main_process = multiprocessing.current_process().name == 'MainProcess'
    except (AttributeError, RuntimeError):
        is_main_process = True

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.INFO)
    console.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    root_logger.handlers.clear()
    root_logger.addHandler(console)

    if is_main_process:
        main_handler = RotatingFileHandler(LOGS_DIR / "run.log", maxBytes=10*1024*1024, backupCount=5,
                                           encoding='utf-8')
        main_handler.setLevel(logging.DEBUG)
        main_handler.setFormatter(formatter)
        error_handler = RotatingFileHandler(LOGS_DIR / "errors.log", maxBytes=10*1024*1024, backupCount=5,
                                            encoding='utf-8')
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(formatter)
        root_logger.addHandler(main_handler)
        root_logger.addHandler(error_handler)

    _logging_configured = True
    return logging.getLogger("main")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--mode", choices=["pc0", "pcinf", "pclambda"], default=None)
    parser.add_argument("--constraints", choices=["one2one", "one2many"], default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None, help="penalty strength")
    parser.add_argument("--states", type=int, default=None, help="number of control states")
    parser.add_argument("--max-seg-len", dest="max_seg_len", type=int, default=None)
    parser.add_argument("--beam", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None, help="length normalization exponent")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--k-samples", dest="k_samples", type=int, default=None)
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="any configuration key")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Posterior-regularized control states for table-to-text generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic restaurant corpus")
    _common(p)
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--data-seed", dest="data_seed", type=int, default=1)
    p.add_argument("--duplicate-rate", dest="duplicate_rate", type=float, default=0.0)
    p.add_argument("--max-length", dest="max_length", type=int, default=32)
    p.add_argument("--out", default=None, help="output directory (defaults to data_dir)")

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--data", default=None, help="directory with train/valid JSONL")
    p.add_argument("--models", default=None, help="checkpoint directory")
    p.add_argument("--run", default="pc", help="run name used for output files")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue <run>_last.pt; --epochs raises the limit")

    p = sub.add_parser("decode", help="beam-search decode tables")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--max-length", dest="max_length", type=int, default=None)

    p = sub.add_parser("control-decode", help="decode under fixed state plans")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--plans", required=True)
    p.add_argument("--data", default=None, help="corpus JSONL that plan records index into")
    p.add_argument("--out", required=True)
    p.add_argument("--no-color", dest="no_color", action="store_true")

    p = sub.add_parser("evaluate", help="controllability and distributional scores")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decodes", default=None, help="decode JSONL; decoded on the fly when omitted")
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--max-length", dest="max_length", type=int, default=None)
    p.add_argument("--skip-distributional", dest="skip_distributional", action="store_true")

    p = sub.add_parser("inspect", help="print tokens with their states")
    _common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--decodes", default=None)
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--no-color", dest="no_color", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    log = setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except PosteriorControlError as e:
        log.error(f"[{e.category}] {e}")
        return e.exit_code
    except KeyboardInterrupt:
        log.info("Interrupted")
        return 130
    except Exception as e:
        log.exception(f"Unexpected error in '{args.command}': {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
