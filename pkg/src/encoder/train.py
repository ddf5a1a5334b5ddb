"""
MLM training loop. All per-step randomness (batch sampling, corruption,
dropout) comes from np.random.default_rng([seed, step]), so a resumed run
replays the same steps as an uninterrupted one.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from src.costmodel.tracker import TRACKER
from src.data.corpus import token_counts
from src.data.mlm import MLMBatch, make_mlm_batch
from src.data.packing import PackedSequence
from src.encoder.checkpoint import Checkpoint, save_checkpoint
from src.encoder.config import ModelConfig, TrainConfig
from src.encoder.model import loss_and_grads, validation_perplexity
from src.encoder.optim import AdamConfig, AdamState, adam_step
from src.encoder.params import ModelParams
from src.errors import ArgumentError, DivergenceError

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "loss", "lr", "tokens_per_sec", "peak_act_bytes"]
# params + grads + Adam m + v
OPTIMIZER_MULTIPLIER = 3
COPY_TASK_DOCS = 512


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    log: pd.DataFrame
    validation: list = field(default_factory=list)   # (step, perplexity)
    last_checkpoint: Path | None = None

    @property
    def final_loss(self) -> float:
        return float(self.log["loss"].iloc[-1])


def copy_task_recipe(seed: int = 0) -> tuple[ModelConfig, TrainConfig, AdamConfig]:
    """
    Default run: 200 steps on COPY_TASK_DOCS copy-task documents whose
    string repeats once per block (period N/n). Every non-identity head then
    finds the masked token at the same offset of its key block.
    """
    model = ModelConfig(num_layers=2, hidden=64, num_heads=8, seq_len=64, num_blocks=8, vocab_size=64,
                        dropout=0.0, attention_dropout=0.0, tie_embeddings=True)
    train = TrainConfig(batch_size=64, max_steps=200, seed=seed, validation_interval=50, mask_rate=0.15)
    adam = AdamConfig(peak_lr=5e-3, total_steps=200, warmup_steps=20)
    return model, train, adam


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def sample_batch(seqs: Sequence[PackedSequence], rng: np.random.Generator, batch_size: int,
                 mask_rate: float, vocab_size: int) -> MLMBatch:
    picks = rng.integers(0, len(seqs), size=batch_size)
    mask_seed = int(rng.integers(0, 2 ** 31))
    return make_mlm_batch([seqs[i] for i in picks], mask_rate, mask_seed, vocab_size)


def validation_batches(seqs: Sequence[PackedSequence], batch_size: int, mask_rate: float,
                       vocab_size: int) -> list[MLMBatch]:
    """Fixed corruption (chunk c uses seed c) so every evaluation sees the same targets."""
    return [make_mlm_batch(seqs[i:i + batch_size], mask_rate, c, vocab_size)
            for c, i in enumerate(range(0, len(seqs), batch_size))]


def _checkpoint_path(directory: Path, step: int) -> Path:
    return directory / f"step{step:06d}.bblk"


def train_loop(train_seqs: Sequence[PackedSequence], valid_seqs: Sequence[PackedSequence],
               model_config: ModelConfig, train_config: TrainConfig, adam_config: AdamConfig,
               params: ModelParams | None = None, state: AdamState | None = None,
               checkpoint_dir: str | Path | None = None, log_path: str | Path | None = None) -> TrainResult:
    """
    Runs steps state.step + 1 .. train_config.max_steps. Pass params/state from
    a checkpoint to resume. On divergence the log so far is written and
    DivergenceError carries the path of the last good checkpoint.
    """
    if not train_seqs:
        raise ArgumentError("no training sequences")
    seed = train_config.seed
    V = model_config.vocab_size
    if params is None:
        params = ModelParams.init(model_config, np.random.default_rng(seed))
    params.check_shapes(model_config)
    if state is None:
        state = AdamState.zeros(params)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    valid = validation_batches(valid_seqs, train_config.batch_size, train_config.mask_rate, V) if valid_seqs else []

    rows = []
    history = []
    last_good = None

    def save(step: int) -> Path:
        return save_checkpoint(_checkpoint_path(ckpt_dir, step),
                               Checkpoint(model_config, params, step, state, {"seed": seed}))

    def flush_log():
        frame = pd.DataFrame(rows, columns=LOG_COLUMNS)
        if log_path is not None:
            frame.to_csv(log_path, index=False)
        return frame

    logger.info("training %s on %d sequences (%d tokens) from step %d to %d", model_config.assignment,
                len(train_seqs), int(token_counts(train_seqs).sum()), state.step + 1, train_config.max_steps)
    with TRACKER.session() as tracker:
        tracker.register_static(params.nbytes * (1 + OPTIMIZER_MULTIPLIER))
        for step in range(state.step + 1, train_config.max_steps + 1):
            rng = step_rng(seed, step)
            batch = sample_batch(train_seqs, rng, train_config.batch_size, train_config.mask_rate, V)
            tracker.reset_peak()
            start = time.perf_counter()
            try:
                loss, grads = loss_and_grads(params, model_config, batch, True, rng, tracker)
                params, state, info = adam_step(params, grads, state, adam_config)
            except DivergenceError as exc:
                flush_log()
                logger.error("diverged at step %d: %s", step, exc)
                raise DivergenceError(f"step {step}: {exc}", checkpoint=str(last_good) if last_good else None) from exc
            elapsed = max(time.perf_counter() - start, 1e-12)

            snap = tracker.snapshot()
            rows.append({
                "step": step,
                "loss": loss,
                "lr": info["lr"],
                "tokens_per_sec": batch.input_ids.size / elapsed,
                "peak_act_bytes": snap.activation_bytes,
            })
            if step % train_config.log_interval == 0 or step == 1:
                logger.info("step %d loss %.4f lr %.3g", step, loss, info["lr"])

            if valid and train_config.validation_interval and step % train_config.validation_interval == 0:
                ppl = validation_perplexity(params, model_config, valid)
                history.append((step, ppl))
                logger.info("step %d validation ppl %.4f", step, ppl)

            if ckpt_dir is not None and (
                    step == train_config.max_steps
                    or (train_config.checkpoint_interval and step % train_config.checkpoint_interval == 0)):
                last_good = save(step)

    return TrainResult(params, state, flush_log(), history, last_good)
