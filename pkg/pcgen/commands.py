"""Implementations of the run_pc.py subcommands."""
import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import torch

from data.corpus import CorpusRecord, DecodeRecord, read_corpus, read_decodes, read_plans, write_jsonl
from data.storage import CorpusStorage
from data.synthetic import SyntheticSpec, gen_synthetic
from pcgen.config import AppSettings, load_settings
from pcgen.errors import ContractError
from pcgen.inference.semicrf import map_segmentation
from pcgen.ml.decoder import DecodeResult, beam_search, constrained_beam_search, greedy_decode
from pcgen.ml.metrics import evaluate_control, evaluate_distributional
from pcgen.ml.model import PosteriorControlModel
from pcgen.ml.trainer import PosteriorControlTrainer, load_checkpoint, resume_training
from pcgen.render import render_block, render_legend

logger = logging.getLogger(__name__)

# flag name -> configuration key
FLAG_KEYS = {
    "mode": "mode", "constraints": "constraints", "lam": "lambda", "states": "states",
    "max_seg_len": "max_seg_len", "beam": "beam", "alpha": "alpha", "seed": "seed",
    "k_samples": "k_samples", "epochs": "max_epochs", "batch_size": "batch_size",
}


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ContractError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def settings_from_args(args: argparse.Namespace) -> AppSettings:
    return load_settings(getattr(args, "config", None), overrides_from_args(args))


def _decode_settings(model: PosteriorControlModel, args: argparse.Namespace):
    """Decode section of the checkpoint, overridden by command flags."""
    decode = model.settings.decode
    if getattr(args, "beam", None) is not None:
        decode = replace(decode, beam_size=args.beam)
    if getattr(args, "alpha", None) is not None:
        decode = replace(decode, length_norm_alpha=args.alpha)
    if getattr(args, "max_length", None) is not None:
        decode = replace(decode, max_length=args.max_length)
    return decode


def _to_record(result: DecodeResult) -> DecodeRecord:
    return DecodeRecord(tokens=tuple(result.tokens), states=result.segmentation, score=result.score,
                        truncated=result.truncated)


def cmd_gen_data(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(size=args.size, seed=args.data_seed, duplicate_value_rate=args.duplicate_rate,
                         max_length=args.max_length)
    out_dir = Path(args.out) if args.out else Path(settings_from_args(args).data_dir)
    paths = gen_synthetic(spec, out_dir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    storage = CorpusStorage(Path(args.data or settings.data_dir), Path(args.models or settings.models_dir))
    train = storage.load_split("train")
    valid = storage.load_split("valid") if "valid" in storage.available_splits() else []
    if settings.decode.max_length is None:
        longest = max(len(r.text) for r in train)
        settings = replace(settings, decode=replace(settings.decode, max_length=2 * longest))
    if getattr(args, "resume", False):
        last = storage.checkpoint_path(args.run, "last")
        result = resume_training(last, train, valid, run_name=args.run, max_epochs=getattr(args, "epochs", None),
                                 model_dir=storage.models_dir)
    else:
        trainer = PosteriorControlTrainer(settings, storage.models_dir)
        result = trainer.fit(train, valid, run_name=args.run)
    print(f"checkpoint: {result.checkpoint}")
    print(f"train log: {result.log_path}")
    return 0


def decode_records(model: PosteriorControlModel, records: Sequence[CorpusRecord], beam_size: int, alpha: float,
                   max_length: int, greedy: bool = False) -> List[DecodeRecord]:
    model.check_fields([r.table for r in records])
    out = []
    with torch.no_grad():
        for r in records:
            ctx = model.encode_table(r.table)
            if greedy:
                result = greedy_decode(model.decoder, ctx, max_length, alpha)
            else:
                result = beam_search(model.decoder, ctx, beam_size, alpha, max_length)
            out.append(_to_record(result))
    return out


def cmd_decode(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(Path(args.checkpoint))
    decode = _decode_settings(model, args)
    records = read_corpus(Path(args.data))
    decodes = decode_records(model, records, decode.beam_size, decode.length_norm_alpha,
                             decode.max_length or 50, greedy=args.greedy)
    count = write_jsonl(Path(args.out), decodes)
    logger.info(f"Decoded {count} tables to {args.out}")
    return 0


def cmd_control_decode(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(Path(args.checkpoint))
    decode = _decode_settings(model, args)
    records = read_corpus(Path(args.data)) if args.data else []
    plans = read_plans(Path(args.plans))
    out = []
    with torch.no_grad():
        for k, plan in enumerate(plans):
            if plan.table is not None:
                table = plan.table
            elif plan.record is not None and 0 <= plan.record < len(records):
                table = records[plan.record].table
            else:
                raise ContractError(f"plan {k + 1} references record {plan.record} outside the corpus")
            model.check_fields([table])
            model.check_plan(plan.states.to_states())
            result = constrained_beam_search(model.decoder, model.encode_table(table), plan.states,
                                             decode.beam_size, decode.length_norm_alpha)
            out.append(_to_record(result))
            print(render_block(f"plan {k + 1}", result.tokens, result.segmentation, color=not args.no_color))
    write_jsonl(Path(args.out), out)
    print(render_legend(model.state_names(), color=not args.no_color))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(Path(args.checkpoint))
    decode = _decode_settings(model, args)
    records = read_corpus(Path(args.data))
    if args.decodes:
        decodes = read_decodes(Path(args.decodes))
        if len(decodes) != len(records):
            raise ContractError(f"{len(decodes)} decodes for {len(records)} records")
    else:
        decodes = decode_records(model, records, decode.beam_size, decode.length_norm_alpha,
                                 decode.max_length or 50)
    sigma = model.evaluation_map()
    control = evaluate_control(decodes, [r.table for r in records], sigma)
    report: Dict[str, Any] = {"control": control.to_dict()}
    if not args.skip_distributional:
        dist = evaluate_distributional(model, records, model.settings.train.k_samples,
                                       decode.importance_samples, seed=model.settings.train.seed)
        report["distributional"] = dist.to_dict()
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    color = not args.no_color
    records = read_corpus(Path(args.data)) if args.data else []
    state_names: Optional[List[str]] = None
    if args.decodes:
        decodes = read_decodes(Path(args.decodes))
        if args.checkpoint:
            model, _ = load_checkpoint(Path(args.checkpoint))
            state_names = model.state_names()
        for k, dec in enumerate(decodes[:args.limit]):
            print(render_block(f"decode {k + 1} (score {dec.score:.3f})", dec.tokens, dec.states, color=color))
    else:
        if not args.checkpoint or not records:
            raise ContractError("inspect needs --decodes, or --checkpoint with --data")
        model, _ = load_checkpoint(Path(args.checkpoint))
        state_names = model.state_names()
        with torch.no_grad():
            for k, r in enumerate(records[:args.limit]):
                pt = model.potentials(r.table, model.tokens(r.text)).detach()
                z, score = map_segmentation(pt)
                print(render_block(f"record {k + 1} MAP (log-score {float(score):.3f})", r.text, z, color=color))
    if state_names is not None:
        print("legend: " + render_legend(state_names, color))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "control-decode": cmd_control_decode,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
}
