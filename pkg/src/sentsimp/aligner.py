"""Monolingual sentence alignment by dynamic programming, plus word-level
alignment bootstrapping.

The DP aligns a complex document to a simpler rewrite of it.  Actions from
state (i, j), where i indexes complex sentences and j simple ones:

* match i with j: scores their symmetric sentence similarity d(i, j);
* skip either sentence at an additive penalty/reward gamma;
* split: divide complex sentence i at word p (1 <= p < word count) and align
  the two fragments to simple sentences j and j+1 in either order (local
  reordering); fragment scores use the directional similarity, no skip term.

Every sentence is either matched or explicitly skipped: when one document is
exhausted, the remainder of the other is consumed by forced skips, so the
value at a state is zero only once both documents are exhausted.

Similarity is smoothed sentence-level BLEU-4 on the 0-100 scale.  Smoothing:
any n-gram precision with a zero numerator or denominator becomes
(num+1)/(den+1); as a guard so disjoint sentences score exactly 0, a pair
with no shared unigram scores 0 outright.

``brute_force_align`` enumerates every legal action sequence under the same
action set (no memoization), combining scores right to left exactly like the
DP recurrence, so optimal scores agree bitwise in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Sequence

import numpy as np

Sentence = Sequence[str]

PREFIX_FIRST = "prefix-first"
SUFFIX_FIRST = "suffix-first"

_ORACLE_MAX_DOC = 5
_ORACLE_MAX_WORDS = 8


def _sent_bleu4(candidate: Sentence, reference: Sentence) -> float:
    """Directional smoothed sentence BLEU-4 (0-100)."""
    if not candidate or not reference:
        return 0.0
    precisions = []
    for n in range(1, 5):
        cand_grams: dict[tuple, int] = {}
        for k in range(len(candidate) - n + 1):
            g = tuple(candidate[k : k + n])
            cand_grams[g] = cand_grams.get(g, 0) + 1
        ref_grams: dict[tuple, int] = {}
        for k in range(len(reference) - n + 1):
            g = tuple(reference[k : k + n])
            ref_grams[g] = ref_grams.get(g, 0) + 1
        num = sum(min(c, ref_grams.get(g, 0)) for g, c in cand_grams.items())
        den = max(0, len(candidate) - n + 1)
        if n == 1 and num == 0:
            return 0.0
        if num == 0 or den == 0:
            precisions.append((num + 1.0) / (den + 1.0))
        else:
            precisions.append(num / den)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)


def sentence_sim(a: Sentence, b: Sentence) -> float:
    """Symmetric similarity: min of both directional BLEU-4 scores."""
    if not a or not b:
        return 0.0
    return min(_sent_bleu4(a, b), _sent_bleu4(b, a))


@dataclass(frozen=True)
class Single:
    i: int
    j: int
    score: float


@dataclass(frozen=True)
class Split:
    i: int
    p: int  # complex sentence i is divided into words [0:p) and [p:)
    j: int  # consumes simple sentences j and j+1
    ordering: str  # PREFIX_FIRST or SUFFIX_FIRST
    score: float


@dataclass
class AlignmentResult:
    matches: list[Single | Split] = field(default_factory=list)
    skipped_complex: list[int] = field(default_factory=list)
    skipped_simple: list[int] = field(default_factory=list)
    score: float = 0.0


class _SimTable:
    """All pairwise and fragment similarities, each computed exactly once."""

    def __init__(self, complex_doc: Sequence[Sentence], simple_doc: Sequence[Sentence]):
        self.d = {}
        self.frag = {}
        for i, ci in enumerate(complex_doc):
            for j, sj in enumerate(simple_doc):
                self.d[i, j] = sentence_sim(ci, sj)
                for p in range(1, len(ci)):
                    self.frag[i, p, j, "pre"] = _sent_bleu4(ci[:p], sj)
                    self.frag[i, p, j, "suf"] = _sent_bleu4(ci[p:], sj)

    def split_score(self, i: int, p: int, j: int, ordering: str) -> float:
        # fragments keep the directional score, as the recurrence is written
        if ordering == PREFIX_FIRST:
            return self.frag[i, p, j, "pre"] + self.frag[i, p, j + 1, "suf"]
        return self.frag[i, p, j + 1, "pre"] + self.frag[i, p, j, "suf"]


def _actions(i, j, d_comp, d_simp, lens, sims, gamma):
    """Candidate actions at (i, j) in tie-break preference order.

    Yields (priority, action_score, next_i, next_j, descriptor); lower
    priority tuples win ties.  Descriptor is ("match",) / ("skip_c",) /
    ("skip_s",) / ("split", p, ordering).
    """
    out = []
    if i < d_comp and j < d_simp:
        out.append(((0, 0, 0, 0), sims.d[i, j], i + 1, j + 1, ("match",)))
    if i < d_comp:
        out.append(((0, 1, 0, 0), gamma, i + 1, j, ("skip_c",)))
    if j < d_simp:
        out.append(((0, 2, 0, 0), gamma, i, j + 1, ("skip_s",)))
    if i < d_comp and j + 1 < d_simp:
        for p in range(1, lens[i]):
            out.append(
                ((1, 0, p, 0), sims.split_score(i, p, j, PREFIX_FIRST), i + 1, j + 2, ("split", p, PREFIX_FIRST))
            )
            out.append(
                ((1, 0, p, 1), sims.split_score(i, p, j, SUFFIX_FIRST), i + 1, j + 2, ("split", p, SUFFIX_FIRST))
            )
    return out


def align(complex_doc: Sequence[Sentence], simple_doc: Sequence[Sentence], gamma: float = 10.0) -> AlignmentResult:
    """Optimal alignment under the recurrence; deterministic backtracking.

    Ties prefer a single match over a split, then match over skipping the
    complex sentence over skipping the simple one, then smaller split index,
    prefix-first ordering.
    """
    if not math.isfinite(gamma):
        raise ValueError("gamma must be finite")
    d_comp, d_simp = len(complex_doc), len(simple_doc)
    sims = _SimTable(complex_doc, simple_doc)
    lens = [len(s) for s in complex_doc]

    # memo over (0..d_comp) x (0..d_simp); filled in reverse dependency order
    value = np.zeros((d_comp + 1, d_simp + 1))
    choice: dict[tuple[int, int], tuple] = {}
    for i in range(d_comp, -1, -1):
        for j in range(d_simp, -1, -1):
            if i >= d_comp and j >= d_simp:
                continue
            best = None
            best_prio = None
            best_act = None
            for prio, score, ni, nj, desc in _actions(i, j, d_comp, d_simp, lens, sims, gamma):
                total = score + value[ni, nj]
                if best is None or total > best or (total == best and prio < best_prio):
                    best, best_prio, best_act = total, prio, (score, ni, nj, desc)
            value[i, j] = best
            choice[i, j] = best_act

    result = AlignmentResult(score=float(value[0, 0]))
    i = j = 0
    while not (i >= d_comp and j >= d_simp):
        score, ni, nj, desc = choice[i, j]
        if desc[0] == "match":
            result.matches.append(Single(i, j, score))
        elif desc[0] == "skip_c":
            result.skipped_complex.append(i)
        elif desc[0] == "skip_s":
            result.skipped_simple.append(j)
        else:
            result.matches.append(Split(i, desc[1], j, desc[2], score))
        i, j = ni, nj
    return result


def score_alignment(
    result: AlignmentResult,
    complex_doc: Sequence[Sentence],
    simple_doc: Sequence[Sentence],
    gamma: float,
) -> float:
    """Recompute a result's score by replaying its actions from (0, 0).

    Scores are accumulated right to left like the recurrence; when a result
    interleaves skips on both sides the replay order can differ from the
    original backtrack, so agreement is exact up to float reassociation.
    """
    sims = _SimTable(complex_doc, simple_doc)
    d_comp, d_simp = len(complex_doc), len(simple_doc)
    by_i = {m.i: m for m in result.matches}
    skip_c = set(result.skipped_complex)
    skip_s = set(result.skipped_simple)
    scores: list[float] = []
    i = j = 0
    while not (i >= d_comp and j >= d_simp):
        m = by_i.get(i)
        if m is not None and m.j == j:
            if isinstance(m, Single):
                scores.append(sims.d[m.i, m.j])
                i, j = i + 1, j + 1
            else:
                scores.append(sims.split_score(m.i, m.p, m.j, m.ordering))
                i, j = i + 1, j + 2
        elif i < d_comp and i in skip_c:
            scores.append(gamma)
            i += 1
        elif j < d_simp and j in skip_s:
            scores.append(gamma)
            j += 1
        else:
            raise ValueError(f"alignment does not cover state ({i}, {j})")
    total = 0.0
    for s in reversed(scores):
        total = s + total
    return total


def brute_force_align(
    complex_doc: Sequence[Sentence], simple_doc: Sequence[Sentence], gamma: float
) -> tuple[float, list[list[tuple]]]:
    """Exhaustively enumerate every legal action sequence; no memoization.

    Returns (best score, all optimal action sequences).  Each action is one
    of ("match", i, j), ("skip_c", i), ("skip_s", j), ("split", i, p, j,
    ordering).  Inputs are bounded (documents <= 5 sentences, sentences <= 8
    words) to keep enumeration tractable.
    """
    d_comp, d_simp = len(complex_doc), len(simple_doc)
    if d_comp > _ORACLE_MAX_DOC or d_simp > _ORACLE_MAX_DOC:
        raise ValueError(f"brute_force_align: documents must have <= {_ORACLE_MAX_DOC} sentences")
    if any(len(s) > _ORACLE_MAX_WORDS for s in complex_doc) or any(
        len(s) > _ORACLE_MAX_WORDS for s in simple_doc
    ):
        raise ValueError(f"brute_force_align: sentences must have <= {_ORACLE_MAX_WORDS} words")
    sims = _SimTable(complex_doc, simple_doc)
    lens = [len(s) for s in complex_doc]

    def enumerate_from(i: int, j: int) -> list[tuple[float, list[tuple]]]:
        if i >= d_comp and j >= d_simp:
            return [(0.0, [])]
        options = []
        for _prio, score, ni, nj, desc in _actions(i, j, d_comp, d_simp, lens, sims, gamma):
            if desc[0] == "match":
                act = ("match", i, j)
            elif desc[0] == "skip_c":
                act = ("skip_c", i)
            elif desc[0] == "skip_s":
                act = ("skip_s", j)
            else:
                act = ("split", i, desc[1], j, desc[2])
            for tail_score, tail in enumerate_from(ni, nj):
                options.append((score + tail_score, [act] + tail))
        return options

    options = enumerate_from(0, 0)
    if not options:
        return 0.0, [[]]
    best = max(score for score, _ in options)
    return best, [seq for score, seq in options if score == best]


def lcs_word_align(complex_sentence: Sentence, simple_sentence: Sentence) -> np.ndarray:
    """Word alignment by recursive longest-contiguous-block matching (diff).

    Returns a binary [len(simple) x len(complex)] matrix; words inside
    matched blocks align one to one, everything else stays unaligned.
    """
    mat = np.zeros((len(simple_sentence), len(complex_sentence)))
    sm = SequenceMatcher(None, list(complex_sentence), list(simple_sentence), autojunk=False)
    for block in sm.get_matching_blocks():
        for k in range(block.size):
            mat[block.b + k, block.a + k] = 1.0
    return mat


def normalize_alignments(gt_matrix: np.ndarray) -> np.ndarray:
    """Row-normalize a binary alignment matrix; all-zero rows stay zero."""
    mat = np.asarray(gt_matrix, dtype=np.float64).copy()
    sums = mat.sum(axis=1, keepdims=True)
    nonzero = sums[:, 0] > 0
    mat[nonzero] /= sums[nonzero]
    return mat


def format_alignment(result: AlignmentResult) -> str:
    """Tab-separated output: match lines in order, then trailing skip lines."""
    lines = []
    for m in result.matches:
        if isinstance(m, Single):
            lines.append(f"SINGLE\t{m.i}\t{m.j}\t{m.score!r}")
        else:
            lines.append(f"SPLIT\t{m.i}\t{m.p}\t{m.j}\t{m.ordering}\t{m.score!r}")
    for i in result.skipped_complex:
        lines.append(f"SKIP_C\t{i}")
    for j in result.skipped_simple:
        lines.append(f"SKIP_S\t{j}")
    return "\n".join(lines)
