"""Next-token training: splits, loss, AdamW with decay groups, one-cycle schedule, early stopping."""

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..core import numerics
from ..core.encoding import LifeSequence, augment, pad_to
from ..core.network import LifeSequenceTransformer
from ..core.vocabulary import PAD_ID, Vocabulary
from ..models.parameters import ModelConfig, SplitSpec, TrainConfig, derive_seed
from ..utils.file_handling import write_csv
from ..utils.logging import ProgressLogger, get_logger

logger = get_logger("training")

LOG_COLUMNS = ["epoch", "step", "lr", "train_loss", "val_loss"]
TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def split_population(person_ids: Sequence[int], spec: SplitSpec) -> Dict[str, List[int]]:
    """Seeded disjoint train/validation/test partition of person ids.

    Raises:
        ValueError: If person ids repeat
    """
    ids = sorted(int(i) for i in person_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("person ids must be unique")
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(round(spec.train * len(ids)))
    n_val = int(round(spec.validation * len(ids)))
    n_val = min(n_val, len(ids) - n_train)
    return {
        "train": sorted(shuffled[:n_train]),
        "validation": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }


def next_token_loss(
    logits: torch.Tensor,
    token_ids: torch.Tensor,
    pad_mask: Optional[torch.Tensor] = None,
    normalizer: Optional[float] = None,
) -> torch.Tensor:
    """Cross-entropy of position t predicting token t+1, PAD targets excluded.

    Args:
        logits: [B, L, V]
        token_ids: [B, L]
        pad_mask: Optional [B, L] bool, True where the token is padding
        normalizer: Divide the summed loss by this count instead of the
            number of non-pad targets in the batch

    Returns:
        Scalar loss
    """
    if logits.shape[:2] != token_ids.shape:
        raise ValueError(
            f"logits {tuple(logits.shape)} and token ids {tuple(token_ids.shape)} disagree"
        )
    targets = token_ids[:, 1:]
    if pad_mask is None:
        pad_mask = token_ids == PAD_ID
    keep = ~pad_mask[:, 1:]
    per_token = F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none"
    ).view_as(targets)
    total = (per_token * keep).sum()
    count = normalizer if normalizer is not None else max(int(keep.sum()), 1)
    return total / count


def onecycle_lr(step: int, total_steps: int, max_lr: float, warmup_fraction: float = 0.3) -> float:
    """Cosine ramp from 0 to max_lr over the warm-up, then cosine decay back to 0."""
    if total_steps < 1:
        raise ValueError("total_steps must be at least 1")
    step = min(max(step, 0), total_steps)
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return max_lr * 0.5 * (1.0 - math.cos(math.pi * step / warmup))
    span = total_steps - warmup
    progress = (step - warmup) / span if span > 0 else 1.0
    return max_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with weight decay on decay-eligible parameters only."""
    decay, no_decay = numerics.decay_groups(model)
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.max_lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
    )


def _parameters(optimizer: torch.optim.Optimizer) -> List[torch.Tensor]:
    return [p for group in optimizer.param_groups for p in group["params"]]


def clip_global_norm(params: Iterable[torch.Tensor], max_norm: float = 5.0) -> float:
    """Rescale gradients so their global L2 norm is at most max_norm; returns the pre-clip norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    params = [p for p in params if p.grad is not None]
    if not params:
        return 0.0
    return float(torch.nn.utils.clip_grad_norm_(params, max_norm))


def adamw_step(optimizer: torch.optim.Optimizer, lr: float) -> bool:
    """Apply one AdamW update at learning rate lr.

    A non-finite gradient aborts the step: gradients are cleared, the
    optimizer state is left untouched and False is returned.
    """
    params = _parameters(optimizer)
    for p in params:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            logger.warning("Non-finite gradient; optimizer step skipped")
            numerics.zero_grad(params)
            return False
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    numerics.zero_grad(params)
    return True


@dataclass
class Batch:
    token_ids: torch.Tensor
    year_index: torch.Tensor
    age: torch.Tensor

    @property
    def n_targets(self) -> int:
        return int((self.token_ids[:, 1:] != PAD_ID).sum())


def collate(sequences: Sequence[LifeSequence], device: Optional[torch.device] = None) -> Batch:
    """Right-pad sequences to the longest one and stack them."""
    if not sequences:
        raise ValueError("cannot collate an empty batch")
    width = max(len(s) for s in sequences)
    padded = [pad_to(s, width) for s in sequences]

    def stack(name: str) -> torch.Tensor:
        return torch.tensor([getattr(s, name) for s in padded], dtype=torch.long, device=device)

    return Batch(stack("tokens"), stack("year_index"), stack("age"))


def make_batches(
    sequences: Sequence[LifeSequence], batch_size: int, seed: int, bucket: bool = True
) -> List[List[LifeSequence]]:
    """Group sequences into batches of similar length, in seeded random order."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sequences))
    if bucket:
        order = sorted(order, key=lambda i: len(sequences[i]))
    batches = [
        [sequences[i] for i in order[start : start + batch_size]]
        for start in range(0, len(order), batch_size)
    ]
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    applied: bool


def train_step(
    model: LifeSequenceTransformer,
    optimizer: torch.optim.Optimizer,
    micro_batches: Sequence[Batch],
    cfg: TrainConfig,
    lr: float,
) -> StepResult:
    """Accumulate gradients over micro-batches, clip, and update once.

    Each micro-batch loss is normalised by the non-pad target count of the
    whole group, so the accumulated gradient equals that of one batch
    holding every sequence of the group.
    """
    model.train()
    total_targets = sum(b.n_targets for b in micro_batches)
    if total_targets == 0:
        raise ValueError("accumulation group has no prediction targets")
    loss_value = 0.0
    for batch in micro_batches:
        logits = model(batch.token_ids, batch.year_index, batch.age)
        loss = next_token_loss(logits, batch.token_ids, normalizer=total_targets)
        numerics.backward(loss)
        loss_value += float(loss.detach())
    grad_norm = clip_global_norm(_parameters(optimizer), cfg.clip_norm)
    applied = adamw_step(optimizer, lr)
    return StepResult(loss_value, grad_norm, applied)


@torch.no_grad()
def evaluate_loss(
    model: LifeSequenceTransformer, sequences: Sequence[LifeSequence], batch_size: int = 16
) -> float:
    """Mean cross-entropy per non-pad target in eval mode."""
    if not sequences:
        raise ValueError("cannot evaluate an empty corpus")
    model.eval()
    device = next(model.parameters()).device
    total, count = 0.0, 0
    for start in range(0, len(sequences), batch_size):
        batch = collate(sequences[start : start + batch_size], device)
        n = batch.n_targets
        if n == 0:
            continue
        logits = model(batch.token_ids, batch.year_index, batch.age)
        total += float(next_token_loss(logits, batch.token_ids)) * n
        count += n
    return total / count if count else float("nan")


@dataclass
class TrainResult:
    initial_val_loss: float
    best_val_loss: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    skipped_steps: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None


def _epoch_corpus(
    sequences: Sequence[LifeSequence], vocab: Optional[Vocabulary], cfg: TrainConfig, epoch: int
) -> List[LifeSequence]:
    if vocab is None or (cfg.token_dropout == 0 and not cfg.same_month_shuffle):
        return list(sequences)
    base = derive_seed(cfg.seed, f"augment/{epoch}")
    return [
        augment(seq, vocab, cfg.same_month_shuffle, cfg.token_dropout, seed=base + i)
        for i, seq in enumerate(sequences)
    ]


def train(
    model: LifeSequenceTransformer,
    train_sequences: Sequence[LifeSequence],
    val_sequences: Sequence[LifeSequence],
    cfg: TrainConfig,
    vocab: Optional[Vocabulary] = None,
    output_dir: Optional[str] = None,
) -> TrainResult:
    """Train with accumulation, clipping, one-cycle schedule and early stopping.

    Performer projections are redrawn and the data reshuffled (and
    augmented when a vocabulary is given) at the start of every epoch.
    Validation always runs under the projections the model arrived with,
    so with frozen weights the validation loss does not change between
    epochs. The best-validation state, evaluation projections included, is
    restored into the model at the end.

    Args:
        model: Model to train in place
        train_sequences: Training corpus
        val_sequences: Validation corpus
        cfg: Training configuration
        vocab: Vocabulary for augmentation (none when omitted)
        output_dir: Where to write training_log.csv and the checkpoint

    Returns:
        TrainResult

    Raises:
        ValueError: If either corpus is empty
        RuntimeError: If the validation loss becomes NaN
    """
    if not train_sequences or not val_sequences:
        raise ValueError("training and validation corpora must be non-empty")
    torch.manual_seed(derive_seed(cfg.seed, "torch"))
    projections = torch.Generator().manual_seed(derive_seed(cfg.seed, "projections"))
    model.set_dropout(cfg.dropout)
    optimizer = build_optimizer(model, cfg)
    device = next(model.parameters()).device
    evaluation_projections = model.projections()

    n_batches = math.ceil(len(train_sequences) / cfg.batch_size)
    steps_per_epoch = math.ceil(n_batches / cfg.accumulation_steps)
    total_steps = steps_per_epoch * cfg.epochs

    initial = evaluate_loss(model, val_sequences, cfg.batch_size)
    logger.info(f"Initial validation loss {initial:.4f}; {total_steps} optimizer steps planned")
    best_loss, best_epoch = math.inf, 0
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    step = 0
    skipped = 0
    history: List[Dict[str, float]] = []
    stopped_early = False
    progress = ProgressLogger(logger)
    progress.start(cfg.epochs, "Training")

    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        model.redraw_projections(projections)
        corpus = _epoch_corpus(train_sequences, vocab, cfg, epoch)
        batches = make_batches(corpus, cfg.batch_size, derive_seed(cfg.seed, f"batches/{epoch}"))
        losses = []
        lr = 0.0
        for start in range(0, len(batches), cfg.accumulation_steps):
            group = [collate(b, device) for b in batches[start : start + cfg.accumulation_steps]]
            lr = onecycle_lr(step, total_steps, cfg.max_lr, cfg.warmup_fraction)
            result = train_step(model, optimizer, group, cfg, lr)
            skipped += not result.applied
            losses.append(result.loss)
            step += 1

        model.set_projections(evaluation_projections)
        val_loss = evaluate_loss(model, val_sequences, cfg.batch_size)
        if math.isnan(val_loss):
            raise RuntimeError(
                f"validation loss is NaN at epoch {epoch} (step {step}, lr {lr:.3g}, "
                f"last train loss {losses[-1] if losses else float('nan'):.4f}, skipped steps {skipped})"
            )
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(
            {"epoch": epoch, "step": step, "lr": lr, "train_loss": train_loss, "val_loss": val_loss}
        )
        progress.step(f"epoch {epoch}: train {train_loss:.4f}, validation {val_loss:.4f}")

        if val_loss < best_loss:
            best_loss, best_epoch, stale = val_loss, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped_early = True
                logger.info(f"Early stopping after epoch {epoch} (best epoch {best_epoch})")
                break
    progress.complete("Training finished")

    model.load_state_dict(best_state)
    result = TrainResult(
        initial_val_loss=initial,
        best_val_loss=best_loss,
        best_epoch=best_epoch,
        epochs_run=epoch,
        stopped_early=stopped_early,
        skipped_steps=skipped,
        history=history,
    )
    if output_dir is not None:
        out = Path(output_dir)
        result.log_path = str(write_csv(str(out / "training_log.csv"), history, LOG_COLUMNS))
        flags = {name: numerics.is_decay_eligible(name) for name, _ in model.named_parameters()}
        bin_path, _ = numerics.save_checkpoint(
            model.state_dict(),
            str(out / "model"),
            decay_flags=flags,
            extra={"model": model.config.to_dict(), "best_epoch": best_epoch, "best_val_loss": best_loss},
        )
        result.checkpoint_path = str(bin_path)
    return result


def load_model(checkpoint: str, dtype: str = "float32") -> LifeSequenceTransformer:
    """Rebuild a model from a checkpoint written by train()."""
    state, manifest = numerics.load_checkpoint(checkpoint)
    config = ModelConfig.from_dict(manifest["extra"]["model"])
    model = LifeSequenceTransformer(config).to(TORCH_DTYPES[dtype])
    model.load_state_dict({k: v.to(TORCH_DTYPES[dtype]) for k, v in state.items()})
    model.eval()
    return model
