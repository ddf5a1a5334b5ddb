"""
Command-line entry point: python -m src.cli <command> [flags]

Exit codes: 0 success, 1 validation failure or runtime error, 2 usage error.
"""
import argparse
import logging
import math
import os
import statistics as stats
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from tabulate import tabulate

from src.attention.blockwise import (
    blockwise_attention,
    blockwise_attention_backward,
    blockwise_attention_backward_from_cache,
    blockwise_attention_forward,
    release_blockwise_cache,
)
from src.attention.dense import masked_attention, masked_attention_backward
from src.costmodel.analytic import attention_flops, cost_report
from src.costmodel.profiler import MeasuredPoint, measure_training_step
from src.costmodel.regression import (
    BERT_BASE_ACTIVATION_LINE,
    BERT_BASE_TOKENS_PER_BATCH,
    RegressionFit,
    reduction_table,
    regress_activation,
)
from src.costmodel.report import (
    cost_report_rows,
    format_cost_table,
    format_reduction_table,
    reduction_rows,
    to_frame,
    write_report_csv,
)
from src.costmodel.tracker import TRACKER
from src.data.corpus import (
    copy_task_corpus,
    corpus_text,
    markov_corpus,
    prepare_sequences,
    read_corpus,
    split_documents,
    train_valid_split,
)
from src.data.vocab import Vocab, build_vocab
from src.encoder.checkpoint import load_checkpoint
from src.encoder.config import ModelConfig, TrainConfig
from src.encoder.model import validation_perplexity
from src.encoder.optim import AdamConfig
from src.encoder.train import COPY_TASK_DOCS, copy_task_recipe, train_loop, validation_batches
from src.errors import ArgumentError, BlockBertError, ConfigError, SimulatedOOMError
from src.masking.block_mask import BlockMaskSpec, build_block_mask, mask_density, padded_length
from src.masking.mask_io import write_mask_csv, write_mask_pbm
from src.masking.permutation import Permutation, enumerate_assignments, shift_permutation
from src.masking.sparse_fixed import SparseFixedMaskSpec, build_sparse_fixed_mask
from src.numerics.gradcheck import check_gradients

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
SEED_ENV = "BLOCKBERT_SEED"
GRADCHECK_TOL = 1e-4
VOCAB_FILE = "vocab.txt"


def int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------- config files

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path: str | Path) -> dict[str, str]:
    """`key = value` lines; `#` starts a comment; dashes in keys become underscores."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            values[key.replace("-", "_")] = value
    return values


def _convert(action: argparse.Action, key: str, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction, argparse.BooleanOptionalAction)):
        low = value.lower()
        if low not in _TRUE | _FALSE:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return (low in _TRUE) != isinstance(action, argparse._StoreFalseAction)
    if action.type is None:
        return value
    try:
        return action.type(value)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Parsed flags after applying the config file; flags win over file values."""
    command: str
    options: dict = field(default_factory=dict)
    seed: int = 0
    config_path: str | None = None

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None


def resolve_run_config(parser: argparse.ArgumentParser, subparsers: dict, argv: Sequence[str]) -> RunConfig:
    args = parser.parse_args(argv)
    sub = subparsers[args.command]
    if getattr(args, "config", None):
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        file_values = read_config_file(args.config)
        unknown = sorted(set(file_values) - set(actions))
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys for '{args.command}': {', '.join(unknown)}")
        sub.set_defaults(**{k: _convert(actions[k], k, v) for k, v in file_values.items()})
        args = parser.parse_args(argv)

    options = vars(args).copy()
    seed = options.pop("seed", None)
    if seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            seed = int(env) if env else 0
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    return RunConfig(options.pop("command"), options, seed, options.pop("config", None))


# ---------------------------------------------------------------- mask

def cmd_mask(cfg: RunConfig) -> int:
    if cfg.sparse_fixed:
        spec = SparseFixedMaskSpec(cfg.seq_len, cfg.stride, cfg.expressivity)
        mask = build_sparse_fixed_mask(spec)
        label = f"sparse-fixed N={cfg.seq_len} stride={cfg.stride} c={cfg.expressivity}"
    else:
        if cfg.perm is not None:
            perm = Permutation.parse(cfg.perm)
        elif cfg.blocks is not None:
            perm = shift_permutation(cfg.blocks, 1)
        else:
            raise ArgumentError("give --perm or --blocks")
        if cfg.blocks is not None and cfg.blocks != perm.n:
            raise ArgumentError(f"--blocks {cfg.blocks} disagrees with permutation {perm} over {perm.n} blocks")
        mask = build_block_mask(BlockMaskSpec(cfg.seq_len, perm.n, perm))
        label = f"block N={cfg.seq_len} n={perm.n} perm={perm}"

    density = mask_density(mask)
    if cfg.out:
        if cfg.format == "pbm":
            write_mask_pbm(mask, cfg.out, comment=label)
        else:
            write_mask_csv(mask, cfg.out)
        logger.info("wrote %s to %s", label, cfg.out)
    print(f"{label}: density {density:.6f}", flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- equiv

def cmd_equiv(cfg: RunConfig) -> int:
    N, n, d = cfg.seq_len, cfg.blocks, cfg.head_dim
    if n < 1 or N % n:
        raise ArgumentError(f"--blocks {n} must divide --seq-len {N}")
    if cfg.trials < 1:
        raise ArgumentError(f"--trials must be >= 1, got {cfg.trials}")
    rng = np.random.default_rng(cfg.seed)
    worst_fwd = 0.0
    worst_bwd = 0.0
    fd_error = None
    for _ in range(cfg.trials):
        perm = Permutation(tuple(int(i) + 1 for i in rng.permutation(n)))
        mask = build_block_mask(BlockMaskSpec(N, n, perm))
        q, k, v, dout = (rng.standard_normal((N, d)) for _ in range(4))
        out_block = blockwise_attention(q, k, v, n, perm)
        out_dense = masked_attention(q, k, v, mask)
        worst_fwd = max(worst_fwd, float(np.max(np.abs(out_block - out_dense))))
        if cfg.backward:
            grads = blockwise_attention_backward(q, k, v, n, perm, dout)
            for gb, gd in zip(grads, masked_attention_backward(q, k, v, mask, dout)):
                worst_bwd = max(worst_bwd, float(np.max(np.abs(gb - gd))))
            if fd_error is None:
                # first trial only: every entry of Q, K and V
                errors = check_gradients(
                    lambda t: float(np.sum(blockwise_attention(t["q"], t["k"], t["v"], n, perm) * dout)),
                    {"q": q, "k": k, "v": v}, dict(zip("qkv", grads)))
                fd_error = max(errors.values())

    worst = max(worst_fwd, worst_bwd)
    ok = worst <= cfg.tol and (fd_error is None or fd_error <= GRADCHECK_TOL)
    print(f"N={N} n={n} d={d} trials={cfg.trials}: max deviation forward {worst_fwd:.3e}"
          + (f" backward {worst_bwd:.3e} finite-difference {fd_error:.3e}" if cfg.backward else "")
          + (" PASS" if ok else f" FAIL (tol {cfg.tol:g})"), flush=True)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- bench

BENCH_COLUMNS = ["N", "n", "batch", "heads", "status", "time_ms", "peak_act_bytes", "score_bytes", "attention_flops"]


def _bench_once(q, k, v, n: int, perm: Permutation, backward: bool, rng) -> float:
    start = time.perf_counter()
    out, cache = blockwise_attention_forward(q, k, v, n, perm)
    TRACKER.track(out, "transient")
    if backward:
        blockwise_attention_backward_from_cache(cache, rng.standard_normal(out.shape))
    else:
        release_blockwise_cache(cache)
    TRACKER.untrack(out, tag="transient")
    return time.perf_counter() - start


def bench_row(N: int, n: int, cfg: RunConfig, rng: np.random.Generator) -> dict:
    Np = padded_length(N, n)
    d, A, b = cfg.head_dim, cfg.heads, cfg.batch
    perm = shift_permutation(n, 1)
    row = {"N": N, "n": n, "batch": b, "heads": A, "status": "ok", "time_ms": math.nan,
           "peak_act_bytes": math.nan, "score_bytes": math.nan,
           "attention_flops": b * attention_flops(Np, d, A, 1, n)}
    q, k, v = (rng.standard_normal((b, A, Np, d)) for _ in range(3))
    times = []
    peak = 0
    scores = 0
    for _ in range(cfg.repeat):
        try:
            with TRACKER.session(cfg.budget_bytes) as tracker:
                times.append(_bench_once(q, k, v, n, perm, cfg.backward, rng))
                snap = tracker.snapshot()
        except SimulatedOOMError as exc:
            logger.warning("N=%d n=%d: %s", N, n, exc)
            row["status"] = "OOM"
            return row
        peak = max(peak, snap.peak_bytes)
        scores = max(scores, snap.peak_by_tag.get("scores", 0))
    row.update(time_ms=1000.0 * stats.mean(times), peak_act_bytes=peak, score_bytes=scores)
    return row


def cmd_bench(cfg: RunConfig) -> int:
    if cfg.repeat < 1:
        raise ArgumentError(f"--repeat must be >= 1, got {cfg.repeat}")
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for N in cfg.seq_lens:
        for n in cfg.blocks:
            row = bench_row(N, n, cfg, rng)
            logger.info("bench %s", row)
            rows.append(row)
    frame = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    if cfg.csv:
        frame.to_csv(cfg.csv, index=False)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".4g"), flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- regress

def _model_from(cfg: RunConfig, seq_len: int | None = None, num_blocks: int | None = None, **extra) -> ModelConfig:
    return ModelConfig(
        num_layers=cfg.layers, hidden=cfg.hidden, num_heads=cfg.heads,
        seq_len=seq_len if seq_len is not None else cfg.seq_len,
        num_blocks=num_blocks if num_blocks is not None else cfg.blocks,
        vocab_size=cfg.vocab, **extra,
    )


def cmd_regress(cfg: RunConfig) -> int:
    if cfg.reference_table:
        fit = RegressionFit.from_line(BERT_BASE_ACTIVATION_LINE, BERT_BASE_TOKENS_PER_BATCH)
        rows = reduction_table(fit, [512, 1024], [1, 2, 3])
        print(format_reduction_table(rows, unit="GB"), flush=True)
        if cfg.csv:
            write_report_csv(to_frame(reduction_rows("reference-bert-base", rows)), cfg.csv)
        return EXIT_OK

    T = cfg.tokens_per_batch
    if len(set(cfg.seq_lens)) < 3:
        raise ArgumentError("regression needs at least 3 distinct --seq-lens")
    bad = [N for N in cfg.seq_lens if T % N]
    if bad:
        raise ArgumentError(f"--tokens-per-batch {T} is not divisible by {bad}")

    csv_rows = []
    fits = {}
    for n in cfg.blocks:
        if cfg.synthetic:
            a2, a1, a0 = cfg.synthetic
            points = [MeasuredPoint(N, T // N, a2 * T * N + a1 * T + a0) for N in cfg.seq_lens]
        else:
            points = []
            for N in cfg.seq_lens:
                model = _model_from(cfg, seq_len=N, num_blocks=n)
                points.append(measure_training_step(model, T // N, cfg.seed))
                logger.info("measured N=%d b=%d n=%d: %d bytes", N, T // N, n, points[-1].activation_bytes)
        fit = regress_activation(points, require_r2=None if cfg.synthetic else cfg.require_r2)
        fits[n] = fit
        print(f"n={n}: slope {fit.slope:.6g} B/token  intercept {fit.linear_term:.6g} B  "
              f"a2 {fit.a2:.6g}  R^2 {fit.r_squared:.6f}", flush=True)
        rows = reduction_table(fit, cfg.seq_lens, [1] if cfg.synthetic else [n])
        csv_rows += reduction_rows(f"n={n}", rows)
        csv_rows += [{"config": f"n={n}", "N": "", "n": n, "metric": m, "value": v}
                     for m, v in (("slope", fit.slope), ("intercept", fit.linear_term),
                                  ("a2", fit.a2), ("r_squared", fit.r_squared))]
        print(format_reduction_table(rows, unit="bytes", digits=0), flush=True)

    if 1 in fits and len(fits) > 1:
        for n, fit in fits.items():
            if n != 1:
                print(f"quadratic coefficient ratio n=1 / n={n}: {fits[1].slope / fit.slope:.4f}", flush=True)
    if cfg.csv:
        write_report_csv(to_frame(csv_rows), cfg.csv)
    return EXIT_OK


# ---------------------------------------------------------------- cost

def cmd_cost(cfg: RunConfig) -> int:
    rows = []
    for N in cfg.seq_lens:
        for n in cfg.blocks:
            model = _model_from(cfg, seq_len=N, num_blocks=n)
            rows += cost_report_rows(f"L={cfg.layers} H={cfg.hidden} A={cfg.heads}", cost_report(model))
    frame = to_frame(rows)
    if cfg.csv:
        write_report_csv(frame, cfg.csv)
    print(format_cost_table(frame), flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- corpora

def load_documents(cfg: RunConfig, seq_len: int, num_blocks: int = 1) -> list[list[str]]:
    """Copy-task strings repeat once per block when n > 1 divides N, else s || s."""
    if cfg.corpus:
        docs = split_documents(read_corpus(cfg.corpus))
        if not docs:
            raise ArgumentError(f"corpus {cfg.corpus} holds no documents")
        return docs
    if cfg.synthetic == "markov":
        return markov_corpus(cfg.num_docs, seq_len, seed=cfg.seed)
    period = seq_len // num_blocks if num_blocks > 1 and seq_len % num_blocks == 0 else None
    return copy_task_corpus(cfg.num_docs, seq_len, seed=cfg.seed, period=period)


def _train_configs(cfg: RunConfig) -> tuple[TrainConfig, AdamConfig]:
    train_cfg = TrainConfig(batch_size=cfg.batch, max_steps=cfg.steps, seed=cfg.seed,
                            validation_interval=cfg.validation_interval,
                            checkpoint_interval=getattr(cfg, "checkpoint_interval", 0) or 0,
                            mask_rate=cfg.mask_rate)
    adam_cfg = AdamConfig(peak_lr=cfg.lr, total_steps=cfg.steps, warmup_steps=cfg.warmup)
    return train_cfg, adam_cfg


# ---------------------------------------------------------------- ablate

ABLATE_COLUMNS = ["assignment", "final_train_loss", "val_loss", "val_ppl", "best"]


def cmd_ablate(cfg: RunConfig) -> int:
    docs = load_documents(cfg, cfg.seq_len, cfg.blocks)
    vocab = build_vocab(corpus_text(docs), cfg.vocab)
    seqs = prepare_sequences(docs, vocab, cfg.seq_len, cfg.blocks)
    train_seqs, valid_seqs = train_valid_split(seqs, cfg.valid_fraction, cfg.seed)
    valid = validation_batches(valid_seqs, cfg.batch, cfg.mask_rate, cfg.vocab)

    rows = []
    mixed = {}
    identity = None
    for assignment in enumerate_assignments(cfg.heads, cfg.blocks):
        model = _model_from(cfg, assignment=assignment, dropout=cfg.dropout,
                            attention_dropout=cfg.dropout, tie_embeddings=cfg.tie_embeddings)
        train_cfg, adam_cfg = _train_configs(cfg)
        result = train_loop(train_seqs, [], model, train_cfg, adam_cfg)
        ppl = validation_perplexity(result.params, model, valid)
        rows.append({"assignment": assignment.label, "final_train_loss": result.final_loss,
                     "val_loss": math.log(ppl), "val_ppl": ppl, "best": ""})
        if assignment.is_all_identity:
            identity = (assignment.label, math.log(ppl))
        elif sum(1 for _ in assignment.groups()) > 1:
            mixed[assignment.label] = math.log(ppl)
        logger.info("assignment %s: val loss %.4f", assignment.label, math.log(ppl))

    frame = pd.DataFrame(rows, columns=ABLATE_COLUMNS)
    frame.loc[frame["val_loss"].idxmin(), "best"] = "*"
    if cfg.csv:
        frame.to_csv(cfg.csv, index=False)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".4f"), flush=True)
    if mixed and identity is not None:
        best = min(mixed, key=mixed.get)
        print(f"best mixed assignment {best} val loss {mixed[best]:.4f} vs all-identity "
              f"{identity[0]} {identity[1]:.4f}", flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- train / eval

def cmd_train(cfg: RunConfig) -> int:
    params = state = None
    if cfg.resume:
        ckpt = load_checkpoint(cfg.resume)
        model, params, state = ckpt.config, ckpt.params, ckpt.state
        docs = load_documents(cfg, model.seq_len, model.num_blocks)
        vocab = Vocab.load(Path(cfg.resume).parent / VOCAB_FILE)
        logger.info("resuming from %s at step %d", cfg.resume, ckpt.step)
    else:
        model = _model_from(cfg, assignment=cfg.assignment, dropout=cfg.dropout,
                            attention_dropout=cfg.dropout, attention=cfg.attention,
                            tie_embeddings=cfg.tie_embeddings)
        docs = load_documents(cfg, model.seq_len, model.num_blocks)
        vocab = build_vocab(corpus_text(docs), model.vocab_size)

    seqs = prepare_sequences(docs, vocab, model.seq_len, model.num_blocks)
    train_seqs, valid_seqs = train_valid_split(seqs, cfg.valid_fraction, cfg.seed)
    train_cfg, adam_cfg = _train_configs(cfg)

    if cfg.checkpoint_dir:
        Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        vocab.save(Path(cfg.checkpoint_dir) / VOCAB_FILE)
    result = train_loop(train_seqs, valid_seqs, model, train_cfg, adam_cfg, params, state,
                        cfg.checkpoint_dir, cfg.log)

    print(f"final loss {result.final_loss:.6f} (uniform baseline {math.log(model.vocab_size):.6f})", flush=True)
    if valid_seqs:
        valid = validation_batches(valid_seqs, cfg.batch, cfg.mask_rate, model.vocab_size)
        print(f"validation perplexity {validation_perplexity(result.params, model, valid):.4f}", flush=True)
    if result.last_checkpoint:
        print(f"checkpoint {result.last_checkpoint}", flush=True)
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = load_checkpoint(cfg.checkpoint)
    vocab_path = Path(cfg.vocab_file) if cfg.vocab_file else Path(cfg.checkpoint).parent / VOCAB_FILE
    vocab = Vocab.load(vocab_path)
    model = ckpt.config
    docs = load_documents(cfg, model.seq_len, model.num_blocks)
    seqs = prepare_sequences(docs, vocab, model.seq_len, model.num_blocks)
    batches = validation_batches(seqs, cfg.batch, cfg.mask_rate, model.vocab_size)
    ppl = validation_perplexity(ckpt.params, model, batches)
    print(f"perplexity {ppl:.4f} over {sum(b.num_predictions for b in batches)} masked positions "
          f"(uniform baseline {model.vocab_size})", flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _model_flags(p: argparse.ArgumentParser, seq_len: int = 128, blocks: int | None = 1) -> None:
    """Shared model-shape flags; blocks=None leaves --blocks to the caller."""
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=seq_len)
    if blocks is not None:
        p.add_argument("--blocks", type=int, default=blocks)
    p.add_argument("--vocab", type=int, default=1024)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", default=None, help="UTF-8 text, blank-line-separated documents")
    p.add_argument("--synthetic", choices=["copy", "markov"], default="copy")
    p.add_argument("--num-docs", type=int, default=512)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=None, help="warmup steps (default: a fixed fraction of --steps)")
    p.add_argument("--tie-embeddings", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--mask-rate", type=float, default=0.15)
    p.add_argument("--valid-fraction", type=float, default=0.1)
    p.add_argument("--validation-interval", type=int, default=50)


COMMANDS = {
    "mask": cmd_mask, "equiv": cmd_equiv, "bench": cmd_bench, "regress": cmd_regress,
    "cost": cmd_cost, "ablate": cmd_ablate, "train": cmd_train, "eval": cmd_eval,
}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="blockbert", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value file; flags override it")
        p.add_argument("--seed", type=int, default=None)
        subs[name] = p
        return p

    p = add("mask", "write a permutation or sparse-fixed mask and print its density")
    p.add_argument("--seq-len", type=int, default=512)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--perm", default=None, help='1-based block permutation, e.g. "2,3,1"')
    p.add_argument("--sparse-fixed", action="store_true")
    p.add_argument("--stride", type=int, default=128)
    p.add_argument("--expressivity", type=int, default=32)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["csv", "pbm"], default="csv")

    p = add("equiv", "check blockwise attention against masked dense attention")
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--backward", action="store_true", help="also compare gradients")

    p = add("bench", "time blockwise attention and record peak tracked bytes")
    p.add_argument("--seq-lens", type=int_list, default=[512, 1024, 2048])
    p.add_argument("--blocks", type=int_list, default=[1, 2, 3])
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--backward", action="store_true")
    p.add_argument("--budget-bytes", type=int, default=None, help="simulated memory budget")
    p.add_argument("--csv", default=None)

    p = add("regress", "fit activation memory against N at fixed b*N")
    _model_flags(p, blocks=None)
    p.add_argument("--blocks", type=int_list, default=[1])
    p.add_argument("--tokens-per-batch", type=int, default=4096)
    p.add_argument("--seq-lens", type=int_list, default=[128, 256, 512, 1024])
    p.add_argument("--synthetic", type=float_list, default=None, metavar="A2,A1,A0")
    p.add_argument("--require-r2", type=float, default=0.99)
    p.add_argument("--reference-table", action="store_true")
    p.add_argument("--csv", default=None)

    p = add("cost", "analytic FLOPs and score-buffer sizes")
    _model_flags(p, blocks=None)
    p.add_argument("--blocks", type=int_list, default=[1, 2, 3])
    p.add_argument("--seq-lens", type=int_list, default=[512, 1024])
    p.add_argument("--csv", default=None)

    p = add("ablate", "train every head assignment and compare validation loss")
    _model_flags(p, seq_len=64, blocks=2)
    _train_flags(p)
    p.add_argument("--csv", default=None)

    p = add("train", "train the MLM encoder")
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--assignment", default=None, help='head split such as "3:1"')
    p.add_argument("--attention", choices=["blockwise", "dense"], default="blockwise")
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--log", default=None, help="CSV training log")
    model, train, adam = copy_task_recipe()
    p.set_defaults(layers=model.num_layers, hidden=model.hidden, heads=model.num_heads, seq_len=model.seq_len,
                   blocks=model.num_blocks, vocab=model.vocab_size, dropout=model.dropout,
                   tie_embeddings=model.tie_embeddings, num_docs=COPY_TASK_DOCS, steps=train.max_steps,
                   batch=train.batch_size, mask_rate=train.mask_rate, validation_interval=train.validation_interval,
                   lr=adam.peak_lr, warmup=adam.warmup_steps)

    p = add("eval", "validation perplexity of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab-file", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--synthetic", choices=["copy", "markov"], default="copy")
    p.add_argument("--num-docs", type=int, default=64)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--mask-rate", type=float, default=0.15)
    return parser, subs


def main(argv: Sequence[str] | None = None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = resolve_run_config(parser, subs, argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return EXIT_USAGE

    logging.basicConfig(level=cfg.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[cfg.command](cfg)
    except (BlockBertError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
