"""
Training loop and checkpoints.

Adam over two parameter groups (generative theta, variational phi and M),
global-norm clipping, learning-rate halving on a validation plateau once the
decay epoch is reached, early stopping on validation PRLBO.
"""
import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from config.settings import MODELS_DIR
from data.corpus import CorpusRecord
from pcgen.config import AppSettings
from pcgen.constraints.alignment import AlignmentSet, extract_alignments
from pcgen.errors import CheckpointError, ContractError, DivergenceError, NonFiniteLossError, VocabularyMismatchError
from pcgen.ml.model import PosteriorControlModel
from pcgen.ml.objective import anneal_coefficient, pcinf_loss, prlbo_loss, step_rng
from pcgen.ml.vocab import Vocabulary
from pcgen.state import EpochRecord, TrainLog, TrainState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2


@dataclass
class Example:
    """A corpus record prepared for training."""
    record: CorpusRecord
    tokens: torch.Tensor
    alignments: AlignmentSet


@dataclass
class TrainResult:
    checkpoint: Path
    state: TrainState
    log_path: Path


def field_inventory(records: Sequence[CorpusRecord]) -> List[str]:
    """Global field inventory in first-seen order."""
    seen: Dict[str, None] = {}
    for r in records:
        for name in r.table.names:
            seen.setdefault(name, None)
    return list(seen)


def build_vocabulary(records: Sequence[CorpusRecord]) -> Vocabulary:
    """Text and table words, so copied table tokens are in the vocabulary."""
    sentences = [r.text for r in records] + [f.value for r in records for f in r.table.fields]
    return Vocabulary.build(sentences)


def alignments_for(record: CorpusRecord, settings: AppSettings) -> AlignmentSet:
    """Training always uses the heuristic A(x, y); gold alignments are for evaluation only."""
    return extract_alignments(record.table, record.text, partial=settings.penalty.align_partial)


class PosteriorControlTrainer:
    def __init__(self, settings: AppSettings, model_dir: Optional[Path] = None):
        self.settings = settings
        self.model_dir = Path(model_dir or settings.models_dir or MODELS_DIR)
        self.model_dir.mkdir(parents=True, exist_ok=True)

    # setup

    def build_model(self, records: Sequence[CorpusRecord],
                    extra_fields: Sequence[CorpusRecord] = ()) -> PosteriorControlModel:
        """Vocabulary from `records` only; `extra_fields` only extend the field inventory."""
        torch.manual_seed(self.settings.train.seed)
        fields = field_inventory(list(records) + list(extra_fields))
        model = PosteriorControlModel(build_vocabulary(records), fields, self.settings)
        logger.info(f"[trainer] Model built: {model.describe()}")
        return model

    def prepare(self, model: PosteriorControlModel, records: Sequence[CorpusRecord]) -> List[Example]:
        model.check_fields([r.table for r in records])
        examples = []
        for r in records:
            if not r.text:
                raise ContractError("empty sentence in corpus")
            examples.append(Example(record=r, tokens=model.tokens(r.text), alignments=alignments_for(r, self.settings)))
        return examples

    def _optimizer(self, model: PosteriorControlModel) -> torch.optim.Adam:
        groups = [{"params": model.generative_parameters(), "lr": self.settings.train.lr_generative, "name": "generative"}]
        if self.settings.train.mode != "pcinf":
            groups.append({"params": model.variational_parameters(), "lr": self.settings.train.lr_inference,
                           "name": "inference"})
        return torch.optim.Adam(groups)

    # objective

    def example_loss(self, model, example: Example, anneal: float, rng) -> Any:
        if self.settings.train.mode == "pcinf":
            return pcinf_loss(model, example.record.table, example.tokens, example.alignments)
        return prlbo_loss(model, example.record.table, example.tokens, example.alignments, self.settings,
                          anneal=anneal, rng=rng)

    def validate(self, model: PosteriorControlModel, examples: Sequence[Example], epoch: int = 0) -> float:
        """Mean PRLBO (PC-infinity: mean joint log-likelihood) at full annealing.

        Sampling streams are fixed per epoch so repeated validation is reproducible.
        """
        if not examples:
            return math.nan
        model.eval()
        total = 0.0
        with torch.no_grad():
            for k, ex in enumerate(examples):
                rng = step_rng(self.settings.train.seed + 7919, epoch, k)
                total += self.example_loss(model, ex, 1.0, rng).prlbo
        model.train()
        return total / len(examples)

    # loop

    def fit(self, train_records: Sequence[CorpusRecord], valid_records: Sequence[CorpusRecord],
            run_name: str = "pc", model: Optional[PosteriorControlModel] = None,
            state: Optional[TrainState] = None, optimizer_state: Optional[Dict[str, Any]] = None) -> TrainResult:
        """Train from scratch, or continue `model` from `state` and `optimizer_state` (resume)."""
        cfg = self.settings.train
        if not train_records:
            raise ContractError("training corpus is empty")
        torch.manual_seed(cfg.seed)
        if model is None:
            model = self.build_model(train_records, extra_fields=valid_records)
        train = self.prepare(model, train_records)
        valid = self.prepare(model, valid_records)

        optimizer = self._optimizer(model)
        if optimizer_state is not None:
            try:
                optimizer.load_state_dict(optimizer_state)
            except ValueError as e:
                raise CheckpointError(f"optimizer state does not match the model: {e}")
        state = state or TrainState(lr_generative=cfg.lr_generative, lr_inference=cfg.lr_inference)
        self._set_lr(optimizer, state)

        steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
        horizon = cfg.anneal_horizon or steps_per_epoch
        log = TrainLog(self.model_dir / f"{run_name}_train_log.jsonl", truncate=state.step == 0)
        best_path = self.model_dir / f"{run_name}_best.pt"

        if state.epoch:
            logger.info(f"[trainer] resuming after epoch {state.epoch} (step {state.step})")
        logger.info(f"[trainer] {cfg.mode} / {self.settings.penalty.mode}: {len(train)} train, {len(valid)} valid, "
                    f"lambda={self.settings.effective_lambda}, K={cfg.k_samples}, anneal horizon {horizon} steps")
        model.train()
        started = time.time()
        for epoch in range(state.epoch + 1, cfg.max_epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
            epoch_loss, batches = 0.0, 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [int(i) for i in order[start:start + cfg.batch_size]]
                value = self._train_step(model, optimizer, train, batch, epoch, horizon, state, log)
                if value is not None:
                    epoch_loss += value
                    batches += 1

            valid_prlbo = self.validate(model, valid, epoch) if valid else -epoch_loss / max(batches, 1)
            if math.isnan(valid_prlbo):
                dump = self._dump_divergence(run_name, state, log)
                raise DivergenceError(f"validation objective is NaN at epoch {epoch}", str(dump))

            improved = valid_prlbo > state.best_valid_prlbo
            if improved:
                state.best_valid_prlbo = valid_prlbo
                state.best_epoch = epoch
                state.epochs_without_improvement = 0
            else:
                state.epochs_without_improvement += 1
                if epoch >= cfg.lr_decay_start_epoch:
                    state.lr_generative /= cfg.lr_decay_factor
                    state.lr_inference /= cfg.lr_decay_factor
                    self._set_lr(optimizer, state)
                    logger.info(f"[trainer] plateau at epoch {epoch}: lr -> {state.lr_generative:.2e} / "
                                f"{state.lr_inference:.2e}")
            state.epoch = epoch
            state.history.append(EpochRecord(epoch=epoch, train_loss=epoch_loss / max(batches, 1),
                                             valid_prlbo=valid_prlbo, lr_generative=state.lr_generative,
                                             lr_inference=state.lr_inference, improved=improved))
            logger.info(f"[trainer] epoch {epoch}: train loss {epoch_loss / max(batches, 1):.4f}, "
                        f"valid PRLBO {valid_prlbo:.4f}{' *' if improved else ''} ({time.time() - started:.0f}s)")
            if improved:
                save_checkpoint(best_path, model, state)
            save_checkpoint(self.model_dir / f"{run_name}_last.pt", model, state, optimizer)

            # neither decay nor early stopping before the decay epoch
            if epoch >= cfg.lr_decay_start_epoch and state.epochs_without_improvement >= cfg.early_stop_patience:
                state.stopped_early = True
                logger.info(f"[trainer] early stop after epoch {epoch} (best epoch {state.best_epoch})")
                break

        state.save(self.model_dir / f"{run_name}_state.json")
        if not best_path.exists():
            save_checkpoint(best_path, model, state)
        return TrainResult(checkpoint=best_path, state=state, log_path=log.path)

    def _train_step(self, model, optimizer, examples: Sequence[Example], batch: Sequence[int], epoch: int,
                    horizon: int, state: TrainState, log: TrainLog) -> Optional[float]:
        cfg = self.settings.train
        state.update_anneal(anneal_coefficient(state.step, horizon))
        optimizer.zero_grad()
        rows = []
        try:
            total = None
            for i in batch:
                terms = self.example_loss(model, examples[i], state.anneal, step_rng(cfg.seed, epoch, i))
                total = terms.loss if total is None else total + terms.loss
                rows.append(terms)
            loss = total / len(batch)
            if not bool(torch.isfinite(loss.detach())):
                raise NonFiniteLossError("loss", float(loss.detach()))
            loss.backward()
        except NonFiniteLossError as e:
            optimizer.zero_grad()
            state.aborted_steps += 1
            state.step += 1
            logger.error(f"[trainer] step {state.step} aborted: {e}")
            return None

        torch.nn.utils.clip_grad_norm_([p for g in optimizer.param_groups for p in g["params"]], cfg.grad_clip)
        optimizer.step()
        state.step += 1

        mean = lambda key: float(np.mean([getattr(t, key) for t in rows]))  # noqa: E731
        penalty_terms: Dict[str, float] = {}
        for t in rows:
            for name, value in t.penalty_terms.items():
                penalty_terms[name] = penalty_terms.get(name, 0.0) + value / len(rows)
        log.write({
            "step": state.step, "epoch": epoch, "elbo": mean("elbo"), "reconstruction": mean("reconstruction"),
            "prior": mean("prior"), "entropy": mean("entropy"), "penalty": mean("penalty"),
            "penalty_terms": penalty_terms, "anneal": state.anneal, "lr_generative": state.lr_generative,
            "lr_inference": state.lr_inference, "loss": float(loss.detach()),
        })
        return float(loss.detach())

    @staticmethod
    def _set_lr(optimizer, state: TrainState) -> None:
        for group in optimizer.param_groups:
            group["lr"] = state.lr_generative if group["name"] == "generative" else state.lr_inference

    def _dump_divergence(self, run_name: str, state: TrainState, log: TrainLog) -> Path:
        path = self.model_dir / f"{run_name}_divergence.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"state": state.to_dict(), "last_step": log.last,
                       "settings": self.settings.to_dict()}, f, indent=2, default=str)
        logger.error(f"[trainer] divergence diagnostics written to {path}")
        return path


def save_checkpoint(path: Path, model: PosteriorControlModel, state: Optional[TrainState] = None,
                    optimizer: Optional[torch.optim.Optimizer] = None) -> Path:
    """One torch container: JSON header, both parameter sets, M, the train state and,
    for resumable checkpoints, the optimizer state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.settings.to_dict(),
        "vocab": model.vocab.to_list(),
        "fields": list(model.fields),
        "state_names": model.state_names(),
    }
    container = {
        "header": json.dumps(header, ensure_ascii=False),
        "model": model.state_dict(),
        "mapping": model.mapping.state_dict() if model.mapping is not None else None,
        "train_state": state.to_dict() if state is not None else None,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    temp_file = path.with_suffix(".tmp")
    torch.save(container, temp_file)
    temp_file.replace(path)
    logger.debug(f"[trainer] checkpoint saved to {path}")
    return path


def _read_checkpoint(path: Path) -> Tuple[PosteriorControlModel, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        container = torch.load(path, map_location="cpu", weights_only=False)
        header = json.loads(container["header"])
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {header.get('format_version')} != {FORMAT_VERSION}")
    try:
        vocab = Vocabulary.from_list(header["vocab"])
    except ValueError as e:
        raise VocabularyMismatchError(f"checkpoint vocabulary is malformed: {e}")
    settings = AppSettings.from_dict(header["config"])
    model = PosteriorControlModel(vocab, header["fields"], settings)
    try:
        model.load_state_dict(container["model"])
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint parameters do not match the stored config: {e}")
    logger.info(f"[trainer] Model loaded from {path} ({model.describe()})")
    return model, container


def load_checkpoint(path: Path) -> Tuple[PosteriorControlModel, Optional[TrainState]]:
    """Model in eval mode and its train state (None for bare checkpoints)."""
    model, container = _read_checkpoint(path)
    state = TrainState.from_dict(container["train_state"]) if container.get("train_state") else None
    model.eval()
    return model, state


def resume_training(path: Path, train_records: Sequence[CorpusRecord], valid_records: Sequence[CorpusRecord],
                    run_name: str, max_epochs: Optional[int] = None,
                    model_dir: Optional[Path] = None) -> TrainResult:
    """Continue a run from its `<run>_last.pt`: parameters, optimizer moments, LR and anneal state.

    The stored settings are used; only `max_epochs` may be raised.
    """
    path = Path(path)
    model, container = _read_checkpoint(path)
    if not container.get("train_state") or container.get("optimizer") is None:
        raise CheckpointError(f"{path} has no train/optimizer state to resume from")
    state = TrainState.from_dict(container["train_state"])
    settings = model.settings
    if max_epochs is not None:
        settings = replace(settings, train=replace(settings.train, max_epochs=max_epochs))
        model.settings = settings
    if state.epoch >= settings.train.max_epochs or state.stopped_early:
        logger.warning(f"[trainer] {path} already finished at epoch {state.epoch}; nothing to resume")
    trainer = PosteriorControlTrainer(settings, model_dir=model_dir or path.parent)
    return trainer.fit(train_records, valid_records, run_name=run_name, model=model, state=state,
                       optimizer_state=container["optimizer"])
