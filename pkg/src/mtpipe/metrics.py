"""Native corpus- and sentence-level BLEU and chrF, plus score-file ingestion.

BLEU uses the community-standard "13a" tokenization, 4-gram clipped precision
with a geometric mean, and the closest-length brevity penalty. Corpus BLEU is
unsmoothed by default (a zero n-gram level zeroes the score); sentence BLEU
uses exponential smoothing with effective n-gram order, the standard choice
when thresholding single sentences. chrF is the character 6-gram F-score with
beta=2, computed on whitespace-stripped text (word n-gram order 0).

Reference-based and reference-free neural scores are never computed here;
they are ingested from TSV files produced by an external scorer.

Every scorer's configuration is summarized in a signature string so reports
are auditable.
"""

from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

NGRAM_ORDER = 4
CHRF_ORDER = 6
CHRF_BETA = 2

_WS_RE = re.compile(r"\s+")


class MetricError(ValueError):
    pass


class IngestError(ValueError):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


def tokenize_13a(line: str) -> str:
    """Minimal mteval-v13a-equivalent tokenization (the WMT default).

    :param line: a segment to tokenize
    :return: the tokenized line (tokens joined by single spaces)
    """
    norm = line
    norm = norm.replace("<skipped>", "")
    norm = norm.replace("-\n", "")
    norm = norm.replace("\n", " ")
    norm = norm.replace("&quot;", '"')
    norm = norm.replace("&amp;", "&")
    norm = norm.replace("&lt;", "<")
    norm = norm.replace("&gt;", ">")

    # assuming Western languages: split punctuation/symbols, keep numbers intact
    norm = " {} ".format(norm)
    norm = re.sub(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])", r" \1 ", norm)
    norm = re.sub(r"([^0-9])([\.,])", r"\1 \2 ", norm)
    norm = re.sub(r"([\.,])([^0-9])", r" \1 \2", norm)
    norm = re.sub(r"([0-9])(-)", r"\1 \2 ", norm)
    norm = re.sub(r"\s+", " ", norm)
    return norm.strip()


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return (
        0x3400 <= code <= 0x4DBF
        or 0x4E00 <= code <= 0x9FFF
        or 0xF900 <= code <= 0xFAFF
        or 0x20000 <= code <= 0x2A6DF
        or 0x2F800 <= code <= 0x2FA1F
        or 0x3000 <= code <= 0x303F
        or 0xFF00 <= code <= 0xFFEF
    )


def tokenize_char(line: str) -> str:
    """Character tokenization for CJK text: isolate each CJK character, then
    apply 13a to whatever remains. Flagged in metric signatures as tok:char."""
    spaced = "".join(f" {ch} " if _is_cjk(ch) else ch for ch in line)
    return tokenize_13a(spaced)


TOKENIZERS: dict[str, Callable[[str], str]] = {
    "13a": tokenize_13a,
    "char": tokenize_char,
    "none": lambda line: line,
}


def _extract_ngrams(tokens: Sequence[str], max_order: int = NGRAM_ORDER) -> Counter:
    ngrams: Counter = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            ngrams[tuple(tokens[i : i + n])] += 1
    return ngrams


@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: tuple[float, ...]
    correct: tuple[int, ...]
    total: tuple[int, ...]
    brevity_penalty: float
    sys_len: int
    ref_len: int
    signature: str

    def __float__(self) -> float:
        return self.score


def _bleu_from_stats(
    correct: list[int],
    total: list[int],
    sys_len: int,
    ref_len: int,
    smooth: str,
    effective_order: bool,
    signature: str,
) -> BleuResult:
    precisions = [0.0] * NGRAM_ORDER
    smooth_exp = 1.0
    order = NGRAM_ORDER
    for n in range(1, NGRAM_ORDER + 1):
        if total[n - 1] == 0:
            break
        if effective_order:
            order = n
        if correct[n - 1] == 0:
            if smooth == "exp":
                smooth_exp *= 2.0
                precisions[n - 1] = 100.0 / (smooth_exp * total[n - 1])
            # smooth == "none": precision stays 0 and zeroes the geometric mean
        else:
            precisions[n - 1] = 100.0 * correct[n - 1] / total[n - 1]

    brevity_penalty = 1.0
    if sys_len < ref_len:
        brevity_penalty = math.exp(1.0 - ref_len / sys_len) if sys_len > 0 else 0.0

    used = precisions[:order]
    if any(p == 0.0 for p in used):
        score = 0.0
    else:
        # clamp exp/log float noise so a perfect corpus scores exactly 100
        score = min(
            100.0, brevity_penalty * math.exp(sum(math.log(p) for p in used) / order)
        )
    return BleuResult(
        score,
        tuple(precisions),
        tuple(correct),
        tuple(total),
        brevity_penalty,
        sys_len,
        ref_len,
        signature,
    )


def _accumulate_pair(
    hyp: str,
    ref: str,
    tokenizer: Callable[[str], str],
    correct: list[int],
    total: list[int],
) -> tuple[int, int]:
    hyp_tokens = tokenizer(hyp.rstrip()).split()
    ref_tokens = tokenizer(ref.rstrip()).split()
    hyp_ngrams = _extract_ngrams(hyp_tokens)
    ref_ngrams = _extract_ngrams(ref_tokens)
    for ngram, count in hyp_ngrams.items():
        n = len(ngram)
        correct[n - 1] += min(count, ref_ngrams.get(ngram, 0))
        total[n - 1] += count
    return len(hyp_tokens), len(ref_tokens)


def corpus_bleu(
    hypotheses: Sequence[str],
    references: Sequence[str],
    tokenize: str = "13a",
    smooth: str = "none",
) -> BleuResult:
    """Corpus BLEU over aligned hypothesis/reference lists.

    :param hypotheses: system outputs, one segment per entry
    :param references: references, aligned 1:1 with `hypotheses`
    :param tokenize: tokenizer name ("13a", "char", or "none")
    :param smooth: "none" (default; zero counts zero the score) or "exp"
    :return: BleuResult with the 0-100 score and sufficient statistics
    """
    if len(hypotheses) != len(references):
        raise MetricError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise MetricError("empty corpus")
    if smooth not in ("none", "exp"):
        raise MetricError(f"unknown smoothing {smooth!r}")
    tokenizer = TOKENIZERS[tokenize]
    correct = [0] * NGRAM_ORDER
    total = [0] * NGRAM_ORDER
    sys_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h_len, r_len = _accumulate_pair(hyp, ref, tokenizer, correct, total)
        sys_len += h_len
        ref_len += r_len
    signature = f"bleu|n:{NGRAM_ORDER}|tok:{tokenize}|smooth:{smooth}|eff:no"
    return _bleu_from_stats(correct, total, sys_len, ref_len, smooth, False, signature)


def sentence_bleu(hypothesis: str, reference: str, tokenize: str = "13a") -> float:
    """Sentence BLEU with exponential smoothing and effective n-gram order.

    :param hypothesis: a single system output
    :param reference: its reference (must be nonempty)
    :return: score in [0, 100]
    """
    if not reference.strip():
        raise MetricError("reference must be nonempty")
    tokenizer = TOKENIZERS[tokenize]
    correct = [0] * NGRAM_ORDER
    total = [0] * NGRAM_ORDER
    sys_len, ref_len = _accumulate_pair(hypothesis, reference, tokenizer, correct, total)
    signature = f"bleu|n:{NGRAM_ORDER}|tok:{tokenize}|smooth:exp|eff:yes"
    return _bleu_from_stats(correct, total, sys_len, ref_len, "exp", True, signature).score


def _char_ngrams(s: str, n: int) -> Counter:
    return Counter(s[i : i + n] for i in range(len(s) - n + 1))


def _chrf_stats(hypothesis: str, reference: str, order: int) -> list[int]:
    hyp = _WS_RE.sub("", hypothesis)
    ref = _WS_RE.sub("", reference)
    stats = [0] * (order * 3)
    for i in range(order):
        n = i + 1
        hyp_ngrams = _char_ngrams(hyp, n)
        ref_ngrams = _char_ngrams(ref, n)
        common = hyp_ngrams & ref_ngrams
        stats[3 * i + 0] = sum(hyp_ngrams.values())
        stats[3 * i + 1] = sum(ref_ngrams.values())
        stats[3 * i + 2] = sum(common.values())
    return stats


def _chrf_from_stats(stats: list[int], order: int, beta: float) -> float:
    avg_precision = 0.0
    avg_recall = 0.0
    effective_order = 0
    for i in range(order):
        hyp_count, ref_count, match_count = stats[3 * i : 3 * i + 3]
        if hyp_count > 0 and ref_count > 0:
            avg_precision += match_count / hyp_count
            avg_recall += match_count / ref_count
            effective_order += 1
    if effective_order == 0:
        return 0.0
    avg_precision /= effective_order
    avg_recall /= effective_order
    if avg_precision + avg_recall == 0.0:
        return 0.0
    beta_sq = beta * beta
    f_score = (1 + beta_sq) * avg_precision * avg_recall / (beta_sq * avg_precision + avg_recall)
    return 100.0 * f_score


def corpus_chrf(
    hypotheses: Sequence[str],
    references: Sequence[str],
    order: int = CHRF_ORDER,
    beta: float = CHRF_BETA,
) -> float:
    """Corpus chrF (character n-gram F-score, whitespace removed).

    :return: score in [0, 100]
    """
    if len(hypotheses) != len(references):
        raise MetricError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise MetricError("empty corpus")
    totals = [0] * (order * 3)
    for hyp, ref in zip(hypotheses, references):
        for i, value in enumerate(_chrf_stats(hyp, ref, order)):
            totals[i] += value
    return _chrf_from_stats(totals, order, beta)


def sentence_chrf(
    hypothesis: str, reference: str, order: int = CHRF_ORDER, beta: float = CHRF_BETA
) -> float:
    """Sentence-level chrF."""
    return _chrf_from_stats(_chrf_stats(hypothesis, reference, order), order, beta)


def metric_signatures() -> dict[str, str]:
    return {
        "bleu_corpus": f"bleu|n:{NGRAM_ORDER}|tok:13a|smooth:none|eff:no",
        "bleu_sentence": f"bleu|n:{NGRAM_ORDER}|tok:13a|smooth:exp|eff:yes",
        "chrf": f"chrf|nc:{CHRF_ORDER}|beta:{CHRF_BETA}|nw:0|space:removed",
    }


@dataclass(frozen=True)
class SegmentEvaluation:
    """Per-segment metric scores for one (system, shot-setting) condition."""

    segment_id: str
    system: str
    shots: int
    bleu_sent: float
    chrf_sent: float
    comet: float | None = None
    kiwi: float | None = None

    def __post_init__(self) -> None:
        for name in ("bleu_sent", "chrf_sent", "comet", "kiwi"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise MetricError(f"{name}={value} outside [0, 100]")


SCORE_TSV_HEADER = ("segment_id", "comet", "kiwi")


def ingest_scores(path: str | Path) -> dict[str, tuple[float | None, float | None]]:
    """Read externally computed neural scores from TSV.

    Expects the exact header `segment_id\\tcomet\\tkiwi`; either score column
    may be empty. Model-range [0, 1] values are stored x100 for display
    consistency with lexical metrics.

    :raises IngestError: codes `duplicate_id`, `range_violation`,
        `parse_error{line}` (bad header, field count, or number format)
    """
    scores: dict[str, tuple[float | None, float | None]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or tuple(header) != SCORE_TSV_HEADER:
            raise IngestError(
                "parse_error{1}", f"expected header {SCORE_TSV_HEADER}, got {header}"
            )
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(
                    f"parse_error{{{lineno}}}", f"line {lineno}: expected 3 fields, got {len(row)}"
                )
            segment_id, comet_raw, kiwi_raw = row
            if segment_id in scores:
                raise IngestError("duplicate_id", f"line {lineno}: duplicate id {segment_id!r}")
            scores[segment_id] = (
                _parse_model_score(comet_raw, "comet", lineno),
                _parse_model_score(kiwi_raw, "kiwi", lineno),
            )
    return scores


def _parse_model_score(raw: str, column: str, lineno: int) -> float | None:
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError as exc:
        raise IngestError(
            f"parse_error{{{lineno}}}", f"line {lineno}: bad {column} value {raw!r}"
        ) from exc
    if not 0.0 <= value <= 1.0:
        raise IngestError(
            "range_violation", f"line {lineno}: {column}={value} outside model range [0, 1]"
        )
    # x100 for display; round away scale-conversion float noise
    return round(value * 100.0, 8)
