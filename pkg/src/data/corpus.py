import logging
import random
from pathlib import Path
from typing import List, Sequence

import numpy as np

from src.data.packing import PackedSequence, pack_sequences, pad_to_block_multiple
from src.data.vocab import Vocab
from src.errors import ArgumentError

logger = logging.getLogger(__name__)


def split_documents(text: str) -> List[List[str]]:
    """Documents are separated by blank lines; tokens by whitespace."""
    docs = []
    current: List[str] = []
    for line in text.splitlines():
        if not line.strip():
            if current:
                docs.append(current)
                current = []
            continue
        current.extend(line.split())
    if current:
        docs.append(current)
    return docs


def read_corpus(path: str | Path) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"corpus file not found: {path}") from exc


def prepare_sequences(docs: Sequence[Sequence[str]], vocab: Vocab, seq_len: int,
                      num_blocks: int = 1) -> list[PackedSequence]:
    """Encode, pack into seq_len chunks and pad each chunk to a multiple of num_blocks."""
    encoded = [vocab.encode(doc) for doc in docs]
    seqs = pack_sequences(encoded, seq_len)
    return [pad_to_block_multiple(s, num_blocks) for s in seqs]


def train_valid_split(seqs: Sequence[PackedSequence], valid_fraction: float,
                      seed: int = 0) -> tuple[list[PackedSequence], list[PackedSequence]]:
    if not 0.0 <= valid_fraction < 1.0:
        raise ArgumentError(f"valid_fraction must be in [0, 1), got {valid_fraction}")
    order = list(range(len(seqs)))
    random.Random(seed).shuffle(order)
    n_valid = int(round(len(seqs) * valid_fraction))
    if valid_fraction > 0 and len(seqs) > 1:
        n_valid = max(1, n_valid)
    valid = [seqs[i] for i in sorted(order[:n_valid])]
    train = [seqs[i] for i in sorted(order[n_valid:])]
    logger.info("split %d sequences into %d train / %d valid", len(seqs), len(train), len(valid))
    return train, valid


def markov_corpus(num_docs: int, doc_len: int, alphabet_size: int = 64,
                  branching: int = 3, seed: int | None = None) -> List[List[str]]:
    """
    Synthetic text from a sparse first-order Markov chain: each symbol has
    `branching` successors picked uniformly, so a model can learn it quickly.
    """
    if num_docs <= 0 or doc_len <= 0:
        raise ArgumentError("Need num_docs>0 and doc_len>0")
    if not 1 <= branching <= alphabet_size:
        raise ArgumentError(f"branching must be in [1, {alphabet_size}], got {branching}")

    rng = random.Random(seed)
    successors = [rng.sample(range(alphabet_size), branching) for _ in range(alphabet_size)]
    docs = []
    for _ in range(num_docs):
        sym = rng.randrange(alphabet_size)
        doc = []
        for _ in range(doc_len):
            doc.append(f"w{sym}")
            sym = rng.choice(successors[sym])
        docs.append(doc)
    return docs


def copy_task_corpus(num_docs: int, seq_len: int, alphabet_size: int = 32,
                     seed: int | None = None, period: int | None = None) -> List[List[str]]:
    """
    Each document is a random string s of `period` tokens repeated to fill
    seq_len (s || s by default). With period N/n every block holds the same
    s and a masked token can be read off the same offset of any other block.
    """
    if period is None:
        if seq_len < 2 or seq_len % 2:
            raise ArgumentError(f"copy task needs an even seq_len >= 2, got {seq_len}")
        period = seq_len // 2
    if period < 1 or seq_len % period or seq_len // period < 2:
        raise ArgumentError(f"period {period} must divide seq_len {seq_len} at least twice")
    if num_docs <= 0:
        raise ArgumentError("Need num_docs>0")

    rng = random.Random(seed)
    docs = []
    for _ in range(num_docs):
        s = [f"s{rng.randrange(alphabet_size)}" for _ in range(period)]
        docs.append(s * (seq_len // period))
    return docs


def corpus_text(docs: Sequence[Sequence[str]]) -> str:
    """Inverse of split_documents."""
    return "\n\n".join(" ".join(doc) for doc in docs) + "\n"


def token_counts(seqs: Sequence[PackedSequence]) -> np.ndarray:
    return np.array([s.num_tokens for s in seqs], dtype=np.int64)
