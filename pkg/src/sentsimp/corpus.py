"""Parallel corpus ingestion, article-level splitting and a synthetic generator.

The TSV interchange format is one pair per line: ``article_id<TAB>complex
<TAB>simple``.  Splits are assigned per article, never per sentence, so no
article contributes pairs to two splits.

The synthetic generator stands in for license-restricted news data.  It
composes complex sentences from a fixed pseudo-word pool (Zipf-weighted, so
some words stay rare) and derives the simple side by one of four rules:
identity copy, dictionary substitution, clause splitting at a marker token,
or phrase deletion.  Alongside the corpus it emits the gold word alignment
of every pair and the substitution dictionary, which downstream oracle
evaluations consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .vocab import tokenize


@dataclass
class ParallelPair:
    article_id: str
    complex: list[str]
    simple: list[str]


@dataclass
class ParallelCorpus:
    pairs: list[ParallelPair] = field(default_factory=list)
    split_of: dict[str, str] = field(default_factory=dict)

    def subset(self, tag: str) -> list[ParallelPair]:
        """Pairs whose article carries the tag; an unsplit corpus is all 'train'."""
        if not self.split_of:
            return list(self.pairs) if tag == "train" else []
        return [p for p in self.pairs if self.split_of.get(p.article_id) == tag]

    def article_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self.pairs:
            seen.setdefault(p.article_id, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.pairs)


def read_parallel_tsv(path: str) -> ParallelCorpus:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(parts)}")
            art, comp, simp = parts
            pairs.append(ParallelPair(art, tokenize(comp), tokenize(simp)))
    return ParallelCorpus(pairs)


def write_parallel_tsv(corpus: ParallelCorpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.pairs:
            fh.write(f"{p.article_id}\t{' '.join(p.complex)}\t{' '.join(p.simple)}\n")


def split_by_article(
    corpus: ParallelCorpus, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0
) -> ParallelCorpus:
    """Shuffle articles by seed and partition into train/val/test by fractions."""
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    arts = corpus.article_ids()
    rng = np.random.default_rng(seed)
    order = [arts[i] for i in rng.permutation(len(arts))]
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    split_of = {}
    for i, art in enumerate(order):
        split_of[art] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    return ParallelCorpus(list(corpus.pairs), split_of)


def dedup_identical(corpus: ParallelCorpus) -> ParallelCorpus:
    """Drop pairs whose two sides are token-identical."""
    kept = [p for p in corpus.pairs if p.complex != p.simple]
    return ParallelCorpus(kept, dict(corpus.split_of))


# ---------------------------------------------------------------------------
# synthetic corpus

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]

SPLIT_MARKER = "and"
SPLIT_REPLACEMENT = "."


def _pseudo_word(n: int) -> str:
    """Deterministic pronounceable word for index n (bijective base-70 syllables)."""
    n += 1
    parts = []
    while n:
        n, r = divmod(n - 1, len(_SYLLABLES))
        parts.append(_SYLLABLES[r])
    return "".join(reversed(parts))


@dataclass
class SynthConfig:
    vocab_size: int = 200
    n_pairs: int = 1000
    copy_frac: float = 0.9
    sub_frac: float = 0.1
    split_frac: float = 0.0
    delete_frac: float = 0.0
    dict_size: int = 12
    min_len: int = 4
    max_len: int = 9
    pairs_per_article: int = 10
    zipf_exponent: float = 0.8
    zipf_offset: float = 0.0
    # successors per word for the bigram chain; 0 samples words independently
    markov_branch: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 20:
            raise ValueError("vocab_size must be >= 20")
        total = self.copy_frac + self.sub_frac + self.split_frac + self.delete_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"rule fractions must sum to 1, got {total}")
        if self.sub_frac > 0 and self.dict_size < 1:
            raise ValueError("substitution rule needs dict_size >= 1")
        if self.vocab_size - 2 * self.dict_size < 4:
            raise ValueError("vocab_size too small for the requested dict_size")
        if not 2 <= self.min_len <= self.max_len:
            raise ValueError("need 2 <= min_len <= max_len")


@dataclass
class SynthCorpus:
    corpus: ParallelCorpus
    # per pair: gold word alignment as (simple index, complex index) tuples
    alignments: list[list[tuple[int, int]]]
    dictionary: dict[str, str]


def synth_generate(cfg: SynthConfig) -> SynthCorpus:
    """Deterministic synthetic parallel corpus for the given config and seed."""
    rng = np.random.default_rng(cfg.seed)
    n_shared = cfg.vocab_size - 2 * cfg.dict_size
    shared = [_pseudo_word(i) for i in range(n_shared)]
    complex_only = [_pseudo_word(n_shared + i) for i in range(cfg.dict_size)]
    simple_only = [_pseudo_word(n_shared + cfg.dict_size + i) for i in range(cfg.dict_size)]
    dictionary = dict(zip(complex_only, simple_only))

    ranks = np.arange(1, n_shared + 1, dtype=np.float64)
    weights = (ranks + cfg.zipf_offset) ** -cfg.zipf_exponent
    weights /= weights.sum()
    rule_p = [cfg.copy_frac, cfg.sub_frac, cfg.split_frac, cfg.delete_frac]

    # optional bigram chain: each word draws its successor set from the same
    # Zipf weights, so unigram marginals keep their shape
    successors = None
    if cfg.markov_branch > 0:
        successors = [rng.choice(n_shared, size=cfg.markov_branch, p=weights) for _ in range(n_shared)]

    def sample_words(length: int) -> list[str]:
        if successors is None:
            return [shared[i] for i in rng.choice(n_shared, size=length, p=weights)]
        w = int(rng.choice(n_shared, p=weights))
        out = [w]
        for _ in range(length - 1):
            w = int(successors[w][rng.integers(cfg.markov_branch)])
            out.append(w)
        return [shared[i] for i in out]

    pairs: list[ParallelPair] = []
    alignments: list[list[tuple[int, int]]] = []
    for k in range(cfg.n_pairs):
        art = f"a{k // cfg.pairs_per_article:05d}"
        rule = int(rng.choice(4, p=rule_p))
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        base = sample_words(length)

        if rule == 0:  # copy
            comp, simp = list(base), list(base)
            align = [(i, i) for i in range(length)]
        elif rule == 1:  # dictionary substitution
            comp, simp = list(base), list(base)
            n_sub = 1 + int(rng.integers(0, max(1, length // 4)))
            positions = rng.choice(length, size=min(n_sub, length), replace=False)
            for pos in positions:
                key = complex_only[int(rng.integers(cfg.dict_size))]
                comp[pos] = key
                simp[pos] = dictionary[key]
            align = [(i, i) for i in range(length)]
        elif rule == 2:  # clause split at a marker token
            la = max(2, length // 2)
            a_part, b_part = base[:la], base[la:]
            if len(b_part) < 2:
                b_part = sample_words(2)
            comp = a_part + [SPLIT_MARKER] + b_part
            simp = a_part + [SPLIT_REPLACEMENT] + b_part
            align = [(i, i) for i in range(len(a_part))]
            align += [(len(a_part) + 1 + m, len(a_part) + 1 + m) for m in range(len(b_part))]
        else:  # phrase deletion
            max_cut = max(1, length // 3)
            cut_len = 1 + int(rng.integers(0, max_cut))
            cut_len = min(cut_len, length - 1)
            start = int(rng.integers(0, length - cut_len + 1))
            comp = list(base)
            simp = base[:start] + base[start + cut_len :]
            align = [(i, i) for i in range(start)]
            align += [(start + m, start + cut_len + m) for m in range(length - start - cut_len)]

        pairs.append(ParallelPair(art, comp, simp))
        alignments.append(align)
    return SynthCorpus(ParallelCorpus(pairs), alignments, dictionary)


def alignment_matrix(align_pairs: Iterable[tuple[int, int]], n_rows: int, n_cols: int) -> np.ndarray:
    """Binary [simple x complex] indicator matrix from (i, j) alignment tuples.

    Tuples outside the given bounds (e.g. past a truncation point) are dropped.
    """
    mat = np.zeros((n_rows, n_cols))
    for i, j in align_pairs:
        if 0 <= i < n_rows and 0 <= j < n_cols:
            mat[i, j] = 1.0
    return mat


def write_alignments(alignments: list[list[tuple[int, int]]], path: str) -> None:
    """Sidecar format: ``pair_index<TAB>simple_word_index<TAB>complex_word_index``."""
    with open(path, "w", encoding="utf-8") as fh:
        for idx, pairs in enumerate(alignments):
            for i, j in pairs:
                fh.write(f"{idx}\t{i}\t{j}\n")


def read_alignments(path: str, n_pairs: int) -> list[list[tuple[int, int]]]:
    out: list[list[tuple[int, int]]] = [[] for _ in range(n_pairs)]
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            idx, i, j = (int(v) for v in parts)
            if not 0 <= idx < n_pairs:
                raise ValueError(f"{path}:{lineno}: pair index {idx} out of range")
            out[idx].append((i, j))
    return out


def write_dictionary(dictionary: dict[str, str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in dictionary.items():
            fh.write(f"{k}\t{v}\n")


def read_dictionary(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns")
            out[parts[0]] = parts[1]
    return out
