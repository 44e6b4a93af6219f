"""Tokenization, vocabulary construction and mixed trainable/fixed embeddings.

The input vocabulary is shared by the encoder and the decoder input path;
each side owns its own trainable embedding block and input projection, but
the frozen pre-trained block is shared (it is never written to).  The
output vocabulary is separate, frequency-floored, and is the only table
that carries the copy token.
"""

from __future__ import annotations

import re
import warnings
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
CPY = "<cpy>"

INPUT_SPECIALS = (PAD, BOS, EOS, UNK)
OUTPUT_SPECIALS = (PAD, BOS, EOS, UNK, CPY)

# words stay whole, every other non-space character becomes its own token
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

INIT_RANGE = 0.08


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, split punctuation into standalone tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Contiguous token ids with specials at the lowest ids.

    Input vocabularies carry (PAD, BOS, EOS, UNK); output vocabularies add
    CPY.  Ids: PAD=0, BOS=1, EOS=2, UNK=3, CPY=4 (output only).
    """

    def __init__(self, tokens: Sequence[str], specials: Sequence[str], counts: dict[str, int] | None = None):
        self.specials = tuple(specials)
        self.tokens: list[str] = list(self.specials) + [t for t in tokens if t not in self.specials]
        self.index: dict[str, int] = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = dict(counts or {})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    @property
    def cpy_id(self) -> int:
        if CPY not in self.index:
            raise ValueError("vocabulary has no copy token (input-side vocabulary)")
        return self.index[CPY]

    @property
    def has_cpy(self) -> bool:
        return CPY in self.index

    def id_of(self, token: str) -> int:
        """Token id, falling back to UNK for unknown tokens."""
        return self.index.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __len__(self) -> int:
        return self.size


def _ranked_tokens(sentences: Iterable[Sequence[str]], specials: Sequence[str]) -> tuple[list[str], Counter]:
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    for sp in specials:
        counts.pop(sp, None)
    # most frequent first, ties broken lexicographically
    ranked = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return ranked, counts


def build_output_vocab(sentences: Iterable[Sequence[str]], max_size: int = 10_000, min_count: int = 7) -> Vocabulary:
    """Output vocabulary: up to max_size most frequent tokens with count >= min_count."""
    ranked, counts = _ranked_tokens(sentences, OUTPUT_SPECIALS)
    kept = [tok for tok in ranked if counts[tok] >= min_count][:max_size]
    return Vocabulary(kept, OUTPUT_SPECIALS, counts)


def load_pretrained(path: str, dim: int = 300) -> dict[str, np.ndarray]:
    """Read a text embedding file: one token followed by `dim` floats per line.

    Duplicate tokens keep the first occurrence (a warning is emitted).
    """
    table: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected token + {dim} values, got {len(parts) - 1} values"
                )
            token = parts[0]
            try:
                vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad float in embedding line") from exc
            if token in table:
                warnings.warn(f"{path}:{lineno}: duplicate token {token!r}, keeping first")
                continue
            table[token] = vec
    return table


class MixedEmbeddingTable:
    """Embedding rows split into a trainable block and a frozen block.

    Row ids are vocabulary ids plus optional extra trainable rows appended
    after the vocabulary (the decoder uses one such row to feed the copy
    token in the no-feeding variant).  Lookups resolve through
    ``row_block``/``row_index`` into one of the two blocks; the projection
    to the model input space is trainable on both paths, but gradients
    reach only trainable-block rows.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        trainable: Tensor,
        fixed: Tensor,
        row_block: np.ndarray,
        row_index: np.ndarray,
        proj_w: Tensor,
        proj_b: Tensor,
        extra_tokens: Sequence[str] = (),
    ):
        self.vocab = vocab
        self.trainable = trainable
        self.fixed = fixed
        self.row_block = row_block
        self.row_index = row_index
        self.proj_w = proj_w
        self.proj_b = proj_b
        self.extra_tokens = tuple(extra_tokens)

    @property
    def n_rows(self) -> int:
        return len(self.row_block)

    @property
    def embedding_dim(self) -> int:
        return self.trainable.shape[1]

    def extra_id(self, token: str) -> int:
        return self.vocab.size + self.extra_tokens.index(token)

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.trainable", self.trainable),
            (f"{prefix}.proj_w", self.proj_w),
            (f"{prefix}.proj_b", self.proj_b),
        ]

    def _gather(self, ids: Sequence[int]) -> Tensor:
        parts = []
        for i in ids:
            if not 0 <= i < self.n_rows:
                raise IndexError(f"embedding id {i} out of range [0, {self.n_rows})")
            block = self.trainable if self.row_block[i] == 0 else self.fixed
            parts.append(T.gather_rows(block, [int(self.row_index[i])]))
        if not parts:
            return Tensor(np.zeros((0, self.embedding_dim)))
        return parts[0] if len(parts) == 1 else T.stack_rows(parts)

    def embed(self, ids: Sequence[int]) -> Tensor:
        """Look up rows and project into the model input space: [len x hidden]."""
        gathered = self._gather(ids)
        if gathered.shape[0] == 0:
            return Tensor(np.zeros((0, self.proj_w.shape[1])))
        return T.add_rowvec(T.matmul(gathered, self.proj_w), self.proj_b)


def build_mixed_table(
    sentences: Iterable[Sequence[str]],
    pretrained: dict[str, np.ndarray] | None,
    trainable_count: int | None = 5000,
    hidden: int = 512,
    embedding_dim: int = 300,
    rng: np.random.Generator | None = None,
    extra_tokens: Sequence[str] = (),
    fixed_block: Tensor | None = None,
    vocab: Vocabulary | None = None,
) -> tuple[Vocabulary, MixedEmbeddingTable]:
    """Build the input vocabulary and its mixed embedding table.

    The trainable block covers the specials, the `trainable_count` most
    frequent corpus tokens (ties lexicographic) and any `extra_tokens`; every
    remaining pretrained token gets a frozen row.  A token in both the top-K
    and the pretrained file gets a trainable row.  Pass `trainable_count=None`
    to make every corpus token trainable (the no-pretrained configuration).

    `fixed_block` / `vocab` let a second table (the decoder side) share the
    frozen rows and vocabulary of a previously built one.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    pretrained = pretrained or {}
    ranked, counts = _ranked_tokens(sentences, INPUT_SPECIALS)
    top = ranked if trainable_count is None else ranked[:trainable_count]
    top_set = set(top)
    fixed_tokens = [tok for tok in pretrained if tok not in top_set and tok not in INPUT_SPECIALS]

    if vocab is None:
        vocab = Vocabulary(list(top) + fixed_tokens, INPUT_SPECIALS, counts)
    n_train = len(INPUT_SPECIALS) + len(top)

    trainable = Tensor(
        rng.uniform(-INIT_RANGE, INIT_RANGE, (n_train + len(extra_tokens), embedding_dim)),
        requires_grad=True,
    )
    if fixed_block is None:
        fixed_data = (
            np.stack([pretrained[tok] for tok in fixed_tokens])
            if fixed_tokens
            else np.zeros((0, embedding_dim))
        )
        fixed_block = Tensor(fixed_data)

    n_rows = vocab.size + len(extra_tokens)
    row_block = np.zeros(n_rows, dtype=np.int8)
    row_index = np.zeros(n_rows, dtype=np.intp)
    row_index[:n_train] = np.arange(n_train)
    row_block[n_train : vocab.size] = 1
    row_index[n_train : vocab.size] = np.arange(vocab.size - n_train)
    # extra trainable rows sit after the vocabulary
    row_index[vocab.size :] = np.arange(n_train, n_train + len(extra_tokens))

    # projection weights scale with fan-in; embedding rows keep the flat range
    proj_w = Tensor(rng.uniform(-1.0, 1.0, (embedding_dim, hidden)) / np.sqrt(embedding_dim), requires_grad=True)
    proj_b = Tensor(np.zeros((1, hidden)), requires_grad=True)
    table = MixedEmbeddingTable(
        vocab, trainable, fixed_block, row_block, row_index, proj_w, proj_b, extra_tokens
    )
    return vocab, table
