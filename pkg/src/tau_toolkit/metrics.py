"""Text-generation and classification metrics.

Text metrics work on sentence pairs; corpus numbers are means of per-clip
scores. An Invalid classifier output is wrong under every metric.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

from .core import AnomalyClass, ParsedLabel

BLEU_EPSILON = 1e-9
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

_PUNCT = string.punctuation


def tokenize(text: Optional[str]) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    if not text:
        return []
    tokens = (t.strip(_PUNCT) for t in text.lower().split())
    return [t for t in tokens if t]


def _as_tokens(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate, reference, max_n: int = 4) -> float:
    """Sentence BLEU-4, uniform weights, add-epsilon on zero precisions."""
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(cand, n)
        total = sum(cand_ngrams.values())
        if total == 0:
            p = BLEU_EPSILON
        else:
            ref_ngrams = _ngrams(ref, n)
            clipped = sum(min(c, ref_ngrams[g]) for g, c in cand_ngrams.items())
            p = (clipped if clipped > 0 else BLEU_EPSILON) / total
        log_sum += math.log(p)
    bp = math.exp(1.0 - len(ref) / len(cand)) if len(cand) < len(ref) else 1.0
    return bp * math.exp(log_sum / max_n)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


# --- METEOR (exact-match modules only) ---

_EXACT_SEARCH_BUDGET = 200_000


class _BudgetExceeded(Exception):
    pass


def _align_exact(cand, ref, budget=_EXACT_SEARCH_BUDGET) -> tuple[int, int]:
    """(matches, chunks) maximizing matches, then minimizing chunks, by memoized search."""
    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        positions.setdefault(tok, []).append(j)
    ref_mask = {tok: sum(1 << j for j in js) for tok, js in positions.items()}
    # later[i]: occurrences of cand[i] strictly after position i
    later = [cand[i + 1:].count(cand[i]) for i in range(len(cand))]
    memo: dict = {}

    def best(i: int, prev: int, used: int) -> tuple[int, int]:
        # returns (matches, -chunks) for cand[i:]
        if i == len(cand):
            return (0, 0)
        key = (i, prev, used)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= budget:
            raise _BudgetExceeded
        # Optimal alignments have the maximal match count, so a token may stay
        # unmatched only if later copies can still fill every free slot.
        free = (ref_mask.get(cand[i], 0) & ~used).bit_count()
        if later[i] >= free:
            m, negc = best(i + 1, -2, used)
            result = (m, negc)
        else:
            result = (-1, 0)
        for j in positions.get(cand[i], ()):
            if used >> j & 1:
                continue
            m, negc = best(i + 1, j, used | (1 << j))
            opt = (m + 1, negc - (0 if prev == j - 1 else 1))
            if opt > result:
                result = opt
        memo[key] = result
        return result

    m, negc = best(0, -2, 0)
    return m, -negc


def _align_greedy(cand, ref) -> tuple[int, int]:
    """Longest-common-run-first alignment; keeps the maximal match count."""
    free_c = [True] * len(cand)
    free_r = [True] * len(ref)
    matches = chunks = 0
    while True:
        best_len, best_i, best_j = 0, -1, -1
        prev = [0] * (len(ref) + 1)
        for i in range(len(cand)):
            cur = [0] * (len(ref) + 1)
            if free_c[i]:
                for j in range(len(ref)):
                    if free_r[j] and cand[i] == ref[j]:
                        cur[j + 1] = prev[j] + 1
                        if cur[j + 1] > best_len:
                            best_len, best_i, best_j = cur[j + 1], i, j
            prev = cur
        if best_len == 0:
            break
        for k in range(best_len):
            free_c[best_i - k] = False
            free_r[best_j - k] = False
        matches += best_len
        chunks += 1
    return matches, chunks


def meteor_alignment(candidate, reference) -> tuple[int, int]:
    """Return (matches, chunks) of the exact-match unigram alignment.

    Exact search when tractable; long inputs with many repeated words fall back
    to a greedy longest-run alignment (the minimum-chunk problem is NP-hard).
    """
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand or not ref:
        return 0, 0
    try:
        return _align_exact(cand, ref)
    except (_BudgetExceeded, RecursionError):
        return _align_greedy(cand, ref)


def meteor(candidate, reference, alpha=METEOR_ALPHA, beta=METEOR_BETA, gamma=METEOR_GAMMA) -> float:
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    matches, chunks = meteor_alignment(cand, ref)
    if matches == 0:
        return 0.0
    p, r = matches / len(cand), matches / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (chunks / matches) ** beta
    return f_mean * (1 - penalty)


# --- classification ---

NORMAL = "normal"
ABNORMAL = "abnormal"


def binary_collapse(label: AnomalyClass) -> str:
    return ABNORMAL if AnomalyClass.parse(label).is_abnormal else NORMAL


def _pred_label(p) -> Optional[Hashable]:
    """Normalize a prediction; None means Invalid."""
    if isinstance(p, ParsedLabel):
        return p.label
    return p


def _check_lengths(preds, gts) -> None:
    if len(preds) != len(gts):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(gts)} labels")
    if not gts:
        raise ValueError("no samples")


def accuracy(preds: Sequence, gts: Sequence) -> float:
    _check_lengths(preds, gts)
    return sum(1 for p, g in zip(preds, gts) if _pred_label(p) == g) / len(gts)


def per_class_f1(preds: Sequence, gts: Sequence, classes: Sequence[Hashable]) -> dict:
    out = {}
    norm = [_pred_label(p) for p in preds]
    for k in classes:
        tp = sum(1 for p, g in zip(norm, gts) if p == k and g == k)
        fp = sum(1 for p, g in zip(norm, gts) if p == k and g != k)
        fn = sum(1 for p, g in zip(norm, gts) if p != k and g == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out[k] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return out


def weighted_f1(preds: Sequence, gts: Sequence, classes: Sequence[Hashable]) -> float:
    """Per-class F1 averaged with ground-truth support weights."""
    _check_lengths(preds, gts)
    f1 = per_class_f1(preds, gts, classes)
    support = Counter(gts)
    total = sum(support[k] for k in classes)
    if total == 0:
        return 0.0
    return sum(support[k] * f1[k] for k in classes) / total


def macro_f1(preds: Sequence, gts: Sequence, classes: Sequence[Hashable]) -> float:
    _check_lengths(preds, gts)
    f1 = per_class_f1(preds, gts, classes)
    return sum(f1.values()) / len(classes)


def binary_predictions(preds: Sequence, gts: Sequence[AnomalyClass]) -> list[str]:
    """Collapse predictions to normal/abnormal; Invalid becomes the wrong side."""
    out = []
    for p, g in zip(preds, gts):
        label = _pred_label(p)
        if label is None:
            out.append(NORMAL if g.is_abnormal else ABNORMAL)
        else:
            out.append(binary_collapse(label))
    return out


@dataclass(frozen=True)
class ClassificationReport:
    accuracy_4: float
    weighted_f1_4: float
    accuracy_2: float
    weighted_f1_2: float
    fp: int
    fn: int
    confusion: list[list[int]]  # rows: ground truth A-D, cols: predicted A-D
    invalid: list[int]  # per ground-truth class, Invalid predictions

    def to_dict(self) -> dict:
        return {
            "accuracy_4": self.accuracy_4,
            "weighted_f1_4": self.weighted_f1_4,
            "accuracy_2": self.accuracy_2,
            "weighted_f1_2": self.weighted_f1_2,
            "fp": self.fp,
            "fn": self.fn,
            "confusion": self.confusion,
            "invalid": self.invalid,
        }


def confusion_and_counts(preds: Sequence, gts: Sequence[AnomalyClass]) -> ClassificationReport:
    _check_lengths(preds, gts)
    gts = [AnomalyClass.parse(g) for g in gts]
    classes = list(AnomalyClass)
    index = {c: i for i, c in enumerate(classes)}
    confusion = [[0] * 4 for _ in range(4)]
    invalid = [0] * 4
    for p, g in zip(preds, gts):
        label = _pred_label(p)
        if label is None:
            invalid[index[g]] += 1
        else:
            confusion[index[g]][index[AnomalyClass.parse(label)]] += 1
    bin_gts = [binary_collapse(g) for g in gts]
    bin_preds = binary_predictions(preds, gts)
    fp = sum(1 for p, g in zip(bin_preds, bin_gts) if g == NORMAL and p == ABNORMAL)
    fn = sum(1 for p, g in zip(bin_preds, bin_gts) if g == ABNORMAL and p == NORMAL)
    return ClassificationReport(
        accuracy_4=accuracy(preds, gts),
        weighted_f1_4=weighted_f1(preds, gts, classes),
        accuracy_2=accuracy(bin_preds, bin_gts),
        weighted_f1_2=weighted_f1(bin_preds, bin_gts, [NORMAL, ABNORMAL]),
        fp=fp,
        fn=fn,
        confusion=confusion,
        invalid=invalid,
    )
