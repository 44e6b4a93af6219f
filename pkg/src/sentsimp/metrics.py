"""Evaluation metrics: corpus BLEU, ROUGE-L, Flesch reading ease, word edit
distance, average sentence length, and the copy/change confusion matrix.

BLEU here is the corpus-level variant (clipped n-gram counts pooled over the
whole corpus, geometric mean, brevity penalty) used for reporting scores.
The smoothed sentence-level BLEU that drives the document aligner lives in
the aligner module.

The syllable count behind the Flesch score is a fixed heuristic: number of
maximal vowel groups (a e i o u y), minus one for a terminal silent 'e'
unless that would reach zero, with a minimum of one per word.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_VOWEL_GROUPS = re.compile(r"[aeiouy]+")
_WORD_CHARS = re.compile(r"[0-9a-zA-Z]")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> tuple[float, ...]:
    """Corpus BLEU-1..max_n on the 0-100 scale, single reference per candidate."""
    if not candidates or len(candidates) != len(references):
        raise ValueError("bleu: need equal, non-zero numbers of candidates and references")
    num = [0] * max_n
    den = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            counts = _ngram_counts(cand, n)
            ref_counts = _ngram_counts(ref, n)
            num[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())
            den[n - 1] += max(0, len(cand) - n + 1)
    if cand_len == 0:
        return tuple(0.0 for _ in range(max_n))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    precisions = [num[i] / den[i] if den[i] > 0 else 0.0 for i in range(max_n)]
    scores = []
    for k in range(1, max_n + 1):
        if any(precisions[i] == 0.0 for i in range(k)):
            scores.append(0.0)
        else:
            log_mean = sum(math.log(precisions[i]) for i in range(k)) / k
            scores.append(100.0 * bp * math.exp(log_mean))
    return tuple(scores)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """Mean sentence-level LCS F1 (beta = 1) on the 0-100 scale."""
    if not candidates or len(candidates) != len(references):
        raise ValueError("rouge_l: need equal, non-zero numbers of candidates and references")
    scores = []
    for cand, ref in zip(candidates, references):
        lcs = _lcs_len(cand, ref)
        if lcs == 0 or not cand or not ref:
            scores.append(0.0)
            continue
        p = lcs / len(cand)
        r = lcs / len(ref)
        scores.append(2.0 * p * r / (p + r))
    return 100.0 * math.fsum(scores) / len(scores)


def syllable_count(word: str) -> int:
    w = word.lower()
    groups = len(_VOWEL_GROUPS.findall(w))
    if w.endswith("e") and groups > 1:
        groups -= 1
    return max(groups, 1)


def flesch(sentences: Sequence[Sequence[str]]) -> float:
    """Flesch reading ease over tokenized sentences; higher means simpler.

    Tokens without an alphanumeric character (pure punctuation) are not
    counted as words.
    """
    n_sentences = 0
    n_words = 0
    n_syllables = 0
    for sent in sentences:
        words = [t for t in sent if _WORD_CHARS.search(t)]
        if not words:
            continue
        n_sentences += 1
        n_words += len(words)
        n_syllables += sum(syllable_count(w) for w in words)
    if n_words == 0:
        raise ValueError("flesch: no words in corpus")
    return 206.835 - 1.015 * (n_words / n_sentences) - 84.6 * (n_syllables / n_words)


def edit_distance_words(a: Sequence[str], b: Sequence[str]) -> int:
    """Word-level Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def avg_words(sentences: Sequence[Sequence[str]]) -> float:
    if not sentences:
        raise ValueError("avg_words: empty corpus")
    return math.fsum(len(s) for s in sentences) / len(sentences)


@dataclass
class ConfusionRecord:
    """One evaluated sentence for the copy/change tally.

    `emitted_is_cpy` and `emitted_surface` describe the model's argmax
    choice per target position (teacher-forced, ground-truth alignments fed);
    `gt_pairs` are gold (simple index, complex index) word alignments.
    """

    enc_tokens: Sequence[str]
    tgt_tokens: Sequence[str]
    emitted_is_cpy: Sequence[bool]
    emitted_surface: Sequence[str]
    gt_pairs: Sequence[tuple[int, int]]


def copy_change_confusion(records: Iterable[ConfusionRecord]) -> tuple[np.ndarray, float]:
    """2x2 counts over aligned positions: generated action x ground-truth action.

    Row/col 0 is "copy", 1 is "change".  An action is a copy when the token
    (emitted, or the ground truth respectively) equals the aligned input
    word; emitting the copy token itself always counts as a generated copy.
    Also returns the fraction of (change, change) positions where the
    emitted word matches the ground truth (NaN when that cell is empty).
    """
    counts = np.zeros((2, 2), dtype=np.int64)
    changed_right = 0
    changed_total = 0
    for rec in records:
        by_pos: dict[int, list[int]] = {}
        for i, j in rec.gt_pairs:
            by_pos.setdefault(i, []).append(j)
        for i, js in sorted(by_pos.items()):
            if not 0 <= i < len(rec.tgt_tokens) or i >= len(rec.emitted_surface):
                continue
            aligned = [rec.enc_tokens[j] for j in js if 0 <= j < len(rec.enc_tokens)]
            if not aligned:
                continue
            gt_copy = rec.tgt_tokens[i] in aligned
            gen_copy = bool(rec.emitted_is_cpy[i]) or rec.emitted_surface[i] in aligned
            counts[0 if gen_copy else 1, 0 if gt_copy else 1] += 1
            if not gen_copy and not gt_copy:
                changed_total += 1
                changed_right += rec.emitted_surface[i] == rec.tgt_tokens[i]
    acc = changed_right / changed_total if changed_total else math.nan
    return counts, acc


@dataclass
class EvalReport:
    b1: float
    b2: float
    b3: float
    b4: float
    rouge: float
    flesch: float
    avg_words: float
    edit_dist: float
    confusion: np.ndarray | None = None
    change_word_accuracy: float | None = None

    def kv_lines(self) -> list[str]:
        lines = [
            f"B-1={self.b1!r}",
            f"B-2={self.b2!r}",
            f"B-3={self.b3!r}",
            f"B-4={self.b4!r}",
            f"Rouge={self.rouge!r}",
            f"Flesch={self.flesch!r}",
            f"AvgWords={self.avg_words!r}",
            f"EditDist={self.edit_dist!r}",
        ]
        if self.confusion is not None:
            c = self.confusion
            lines += [
                f"ConfusionCopyCopy={int(c[0, 0])}",
                f"ConfusionCopyChange={int(c[0, 1])}",
                f"ConfusionChangeCopy={int(c[1, 0])}",
                f"ConfusionChangeChange={int(c[1, 1])}",
            ]
        if self.change_word_accuracy is not None:
            lines.append(f"ChangeWordAccuracy={self.change_word_accuracy!r}")
        return lines

    def table(self) -> str:
        rows = [
            ("B-1", self.b1),
            ("B-2", self.b2),
            ("B-3", self.b3),
            ("B-4", self.b4),
            ("Rouge", self.rouge),
            ("Flesch", self.flesch),
            ("Avg.Words", self.avg_words),
            ("Edit Dist.", self.edit_dist),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:10.4f}" for name, value in rows)


def evaluate_corpus(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    originals: Sequence[Sequence[str]],
) -> EvalReport:
    """Full metric suite; edit distance is measured against the originals."""
    if not (len(candidates) == len(references) == len(originals)):
        raise ValueError("evaluate_corpus: file lengths differ")
    b1, b2, b3, b4 = bleu(candidates, references)
    dists = [edit_distance_words(o, c) for o, c in zip(originals, candidates)]
    return EvalReport(
        b1=b1,
        b2=b2,
        b3=b3,
        b4=b4,
        rouge=rouge_l(candidates, references),
        flesch=flesch(candidates),
        avg_words=avg_words(candidates),
        edit_dist=math.fsum(dists) / len(dists),
    )
