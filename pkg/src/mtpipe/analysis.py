"""Diagnostic analyses over per-segment evaluations.

Covers the four report families: per-segment score deltas between zero- and
few-shot conditions (with histogram and an extreme-tail listing for manual
inspection), hallucination-under-perturbation rates (a segment scoring above
the high sentence-BLEU threshold without examples and below the low threshold
with them), output-length distributions with an overgeneration summary, and
multi-way mean-score tables in long and pivoted layouts.

All outputs are CSV (UTF-8, header row, RFC-4180 quoting); inspection
listings are JSONL with full texts. Empty groups report "n/a", never 0, so
missing data cannot masquerade as a perfect system.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from mtpipe.generation import FINISH_NEWLINE, GenerationResult
from mtpipe.metrics import SegmentEvaluation, metric_signatures
from mtpipe.util import atomic_write

HALLUCINATION_HI = 30.0
HALLUCINATION_LO = 3.0

METRIC_FIELDS = {
    "bleu": "bleu_sent",
    "chrf": "chrf_sent",
    "comet": "comet",
    "kiwi": "kiwi",
}


class AnalysisError(ValueError):
    pass


class IdMismatchError(AnalysisError):
    def __init__(self, missing_in_zero: Sequence[str], missing_in_few: Sequence[str]) -> None:
        self.missing_in_zero = sorted(missing_in_zero)
        self.missing_in_few = sorted(missing_in_few)
        super().__init__(
            "segment id sets differ: "
            f"missing in zero-shot set: {self.missing_in_zero[:10]}; "
            f"missing in few-shot set: {self.missing_in_few[:10]}"
        )


@dataclass(frozen=True)
class SegmentInfo:
    """Side metadata for a segment, carried next to evaluations."""

    pair: str
    domain: str = ""
    src_text: str = ""
    ref_text: str = ""


@dataclass(frozen=True)
class DeltaRecord:
    segment_id: str
    pair: str
    domain: str
    score_zero: float
    score_few: float

    @property
    def delta(self) -> float:
        return self.score_few - self.score_zero


def _score_map(
    evaluations: Iterable[SegmentEvaluation], metric: str
) -> dict[str, float]:
    field_name = METRIC_FIELDS.get(metric)
    if field_name is None:
        raise AnalysisError(f"unknown metric {metric!r}; expected one of {sorted(METRIC_FIELDS)}")
    scores: dict[str, float] = {}
    for ev in evaluations:
        value = getattr(ev, field_name)
        if value is None:
            raise AnalysisError(f"segment {ev.segment_id}: metric {metric} absent")
        if ev.segment_id in scores:
            raise AnalysisError(f"duplicate segment id {ev.segment_id} in evaluation set")
        scores[ev.segment_id] = value
    return scores


def compute_deltas(
    zero: Iterable[SegmentEvaluation],
    few: Iterable[SegmentEvaluation],
    metric: str = "comet",
    info: Mapping[str, SegmentInfo] | None = None,
) -> list[DeltaRecord]:
    """Per-segment score difference, few-shot minus zero-shot.

    Both sets must cover exactly the same segment ids; a mismatch raises
    `IdMismatchError` listing the offending ids.
    """
    zero_scores = _score_map(zero, metric)
    few_scores = _score_map(few, metric)
    if zero_scores.keys() != few_scores.keys():
        raise IdMismatchError(
            missing_in_zero=sorted(few_scores.keys() - zero_scores.keys()),
            missing_in_few=sorted(zero_scores.keys() - few_scores.keys()),
        )
    records = []
    for segment_id in sorted(zero_scores):
        meta = info.get(segment_id) if info else None
        records.append(
            DeltaRecord(
                segment_id=segment_id,
                pair=meta.pair if meta else "",
                domain=meta.domain if meta else "",
                score_zero=zero_scores[segment_id],
                score_few=few_scores[segment_id],
            )
        )
    return records


def delta_histogram(
    records: Iterable[DeltaRecord], bin_width: float = 1.0
) -> list[tuple[float, float, int]]:
    """Fixed-width histogram of deltas as (bin_lo, bin_hi, count) rows."""
    if bin_width <= 0:
        raise AnalysisError(f"bin_width must be positive, got {bin_width}")
    counts: Counter = Counter()
    for record in records:
        counts[math.floor(record.delta / bin_width)] += 1
    return [
        (index * bin_width, (index + 1) * bin_width, counts[index])
        for index in sorted(counts)
    ]


def top_deltas(records: Iterable[DeltaRecord], k: int = 20) -> list[DeltaRecord]:
    """The k records with the largest |delta|, largest first (id breaks ties)."""
    return sorted(records, key=lambda r: (-abs(r.delta), r.segment_id))[:k]


def write_delta_outputs(
    records: Sequence[DeltaRecord],
    out_dir: str | Path,
    metric: str,
    info: Mapping[str, SegmentInfo] | None = None,
    top_k: int = 20,
    bin_width: float = 1.0,
) -> dict[str, int]:
    """Emit deltas.csv, delta_histogram.csv, and delta_top.jsonl."""
    out_dir = Path(out_dir)
    counts: dict[str, int] = {}

    rows = [
        {
            "segment_id": r.segment_id,
            "pair": r.pair,
            "domain": r.domain,
            "metric": metric,
            "score_zero": r.score_zero,
            "score_few": r.score_few,
            "delta": r.delta,
        }
        for r in records
    ]
    counts["deltas.csv"] = write_csv(out_dir / "deltas.csv", rows)

    hist_rows = [
        {"bin_lo": lo, "bin_hi": hi, "count": n}
        for lo, hi, n in delta_histogram(records, bin_width)
    ]
    counts["delta_histogram.csv"] = write_csv(out_dir / "delta_histogram.csv", hist_rows)

    listing = []
    for record in top_deltas(records, top_k):
        entry = {
            "segment_id": record.segment_id,
            "pair": record.pair,
            "domain": record.domain,
            "score_zero": record.score_zero,
            "score_few": record.score_few,
            "delta": record.delta,
        }
        meta = info.get(record.segment_id) if info else None
        if meta is not None:
            entry["src_text"] = meta.src_text
            entry["ref_text"] = meta.ref_text
        listing.append(entry)
    with atomic_write(out_dir / "delta_top.jsonl") as fh:
        for entry in listing:
            fh.write(json.dumps(entry, ensure_ascii=False))
            fh.write("\n")
    counts["delta_top.jsonl"] = len(listing)
    return counts


@dataclass
class GroupRate:
    n_segments: int = 0
    n_flagged: int = 0

    @property
    def rate(self) -> float | None:
        if self.n_segments == 0:
            return None
        return self.n_flagged / self.n_segments


@dataclass
class HallucinationReport:
    hi: float
    lo: float
    overall: GroupRate = field(default_factory=GroupRate)
    by_domain: dict[str, GroupRate] = field(default_factory=dict)
    by_pair: dict[str, GroupRate] = field(default_factory=dict)
    flagged_ids: list[str] = field(default_factory=list)


def format_rate(rate: float | None) -> str:
    return "n/a" if rate is None else f"{100.0 * rate:.2f}%"


def hallucination_rate(
    zero_bleu: Mapping[str, float],
    few_bleu: Mapping[str, float],
    hi: float = HALLUCINATION_HI,
    lo: float = HALLUCINATION_LO,
    info: Mapping[str, SegmentInfo] | None = None,
) -> HallucinationReport:
    """Rate of segments adequate without examples that collapse with them.

    A segment is flagged iff its zero-shot sentence BLEU is strictly above
    `hi` and its few-shot sentence BLEU strictly below `lo` (exact-threshold
    values are not flagged). Grouped rates use the pair/domain metadata in
    `info`; an empty group's rate is None and renders as "n/a".
    """
    if zero_bleu.keys() != few_bleu.keys():
        raise IdMismatchError(
            missing_in_zero=sorted(few_bleu.keys() - zero_bleu.keys()),
            missing_in_few=sorted(zero_bleu.keys() - few_bleu.keys()),
        )
    report = HallucinationReport(hi=hi, lo=lo)
    for segment_id in sorted(zero_bleu):
        flagged = zero_bleu[segment_id] > hi and few_bleu[segment_id] < lo
        meta = info.get(segment_id) if info else None
        domain = meta.domain if meta else ""
        pair = meta.pair if meta else ""
        report.overall.n_segments += 1
        report.by_domain.setdefault(domain, GroupRate()).n_segments += 1
        report.by_pair.setdefault(pair, GroupRate()).n_segments += 1
        if flagged:
            report.overall.n_flagged += 1
            report.by_domain[domain].n_flagged += 1
            report.by_pair[pair].n_flagged += 1
            report.flagged_ids.append(segment_id)
    return report


def hallucination_table(
    reports: Mapping[str, HallucinationReport]
) -> tuple[list[str], list[list[str]]]:
    """Domain x system pivot of hallucination rates, formatted as percentages."""
    systems = sorted(reports)
    domains = sorted({d for rep in reports.values() for d in rep.by_domain})
    header = ["domain", *systems]
    rows = []
    for domain in domains:
        row = [domain]
        for system in systems:
            group = reports[system].by_domain.get(domain)
            row.append(format_rate(group.rate if group else None))
        rows.append(row)
    overall = ["(all)"] + [format_rate(reports[s].overall.rate) for s in systems]
    rows.append(overall)
    return header, rows


def write_hallucination_csv(
    path: str | Path, reports: Mapping[str, HallucinationReport]
) -> int:
    header, rows = hallucination_table(reports)
    with atomic_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return len(rows)


@dataclass
class LengthReport:
    histograms: dict[str, Counter]
    reference: Counter
    overgeneration: dict[str, float]
    total_variation: dict[str, float]


def _normalized(hist: Counter) -> dict[int, float]:
    total = sum(hist.values())
    if total == 0:
        return {}
    return {length: count / total for length, count in hist.items()}


def total_variation(a: Counter, b: Counter) -> float:
    """Total variation distance between two count distributions."""
    p = _normalized(a)
    q = _normalized(b)
    bins = set(p) | set(q)
    return 0.5 * sum(abs(p.get(x, 0.0) - q.get(x, 0.0)) for x in bins)


def length_distribution(
    results_by_system: Mapping[str, Sequence[GenerationResult]],
    reference_lengths: Sequence[int],
) -> LengthReport:
    """Token-length histograms per system plus divergence from the references.

    The overgeneration ratio is the fraction of results whose finish is
    `newline_truncated`; the divergence scalar is total variation distance
    between the system's length distribution and the references'.
    """
    reference = Counter(reference_lengths)
    histograms: dict[str, Counter] = {}
    overgeneration: dict[str, float] = {}
    divergences: dict[str, float] = {}
    for system, results in results_by_system.items():
        ok = [r for r in results if r.error is None]
        histograms[system] = Counter(r.translation_token_count for r in ok)
        overgeneration[system] = (
            sum(1 for r in ok if r.finish == FINISH_NEWLINE) / len(ok) if ok else 0.0
        )
        divergences[system] = total_variation(histograms[system], reference)
    return LengthReport(histograms, reference, overgeneration, divergences)


def write_length_csvs(report: LengthReport, out_dir: str | Path) -> dict[str, int]:
    out_dir = Path(out_dir)
    rows = []
    for system in sorted(report.histograms):
        for tokens in sorted(report.histograms[system]):
            rows.append(
                {"system": system, "tokens": tokens, "count": report.histograms[system][tokens]}
            )
    for tokens in sorted(report.reference):
        rows.append({"system": "reference", "tokens": tokens, "count": report.reference[tokens]})
    counts = {"length_histogram.csv": write_csv(out_dir / "length_histogram.csv", rows)}

    summary = [
        {
            "system": system,
            "overgeneration_ratio": report.overgeneration[system],
            "total_variation_vs_reference": report.total_variation[system],
        }
        for system in sorted(report.histograms)
    ]
    counts["length_summary.csv"] = write_csv(out_dir / "length_summary.csv", summary)
    return counts


_PIVOT_METRICS = ("comet", "kiwi", "bleu", "chrf")


@dataclass
class AggregateReport:
    long_rows: list[dict]
    pivot_rows: list[dict]


def aggregate_report(
    evaluations: Iterable[SegmentEvaluation],
    info: Mapping[str, SegmentInfo] | None = None,
) -> AggregateReport:
    """Mean score per (pair, system, shots, metric).

    Returns long-format rows {system, pair, shots, metric, value} plus a
    pivoted layout with one row per (pair, system, shots) and one column per
    metric. Cells with no data are None and render as "n/a".
    """
    sums: dict[tuple[str, str, int], dict[str, list[float]]] = {}
    for ev in evaluations:
        meta = info.get(ev.segment_id) if info else None
        pair = meta.pair if meta else ""
        key = (pair, ev.system, ev.shots)
        bucket = sums.setdefault(key, {m: [] for m in _PIVOT_METRICS})
        for metric in _PIVOT_METRICS:
            value = getattr(ev, METRIC_FIELDS[metric])
            if value is not None:
                bucket[metric].append(value)

    long_rows = []
    pivot_rows = []
    for pair, system, shots in sorted(sums):
        bucket = sums[(pair, system, shots)]
        pivot: dict = {"pair": pair, "system": system, "shots": shots}
        for metric in _PIVOT_METRICS:
            values = bucket[metric]
            mean = sum(values) / len(values) if values else None
            long_rows.append(
                {
                    "system": system,
                    "pair": pair,
                    "shots": shots,
                    "metric": metric,
                    "value": mean,
                }
            )
            pivot[metric] = mean
        pivot_rows.append(pivot)
    return AggregateReport(long_rows, pivot_rows)


def write_aggregate_csvs(report: AggregateReport, out_dir: str | Path) -> dict[str, int]:
    out_dir = Path(out_dir)
    signature = "; ".join(f"{k}={v}" for k, v in metric_signatures().items())
    return {
        "scores_long.csv": write_csv(
            out_dir / "scores_long.csv", report.long_rows, comment=signature
        ),
        "scores_pivot.csv": write_csv(
            out_dir / "scores_pivot.csv", report.pivot_rows, comment=signature
        ),
    }


def write_csv(path: str | Path, rows: Sequence[dict], comment: str | None = None) -> int:
    """Write dict rows as CSV with a header (RFC-4180 quoting, UTF-8).

    None values render as "n/a". An optional `# ...` comment line above the
    header carries report metadata such as metric signatures; the module's
    readers skip it. An empty row list produces an empty file (nothing to
    describe).
    """
    with atomic_write(path) as fh:
        if not rows:
            return 0
        if comment is not None:
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("n/a" if v is None else v) for k, v in row.items()})
    return len(rows)


def read_csv_rows(path: str | Path) -> list[dict]:
    """Read a CSV written by `write_csv` back into dict rows (strings)."""
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


EVALUATION_COLUMNS = (
    "segment_id",
    "system",
    "shots",
    "pair",
    "domain",
    "bleu",
    "chrf",
    "comet",
    "kiwi",
    "src_text",
    "ref_text",
)


def write_evaluations_csv(
    path: str | Path,
    evaluations: Sequence[SegmentEvaluation],
    info: Mapping[str, SegmentInfo] | None = None,
) -> int:
    rows = []
    for ev in evaluations:
        meta = info.get(ev.segment_id) if info else None
        rows.append(
            {
                "segment_id": ev.segment_id,
                "system": ev.system,
                "shots": ev.shots,
                "pair": meta.pair if meta else "",
                "domain": meta.domain if meta else "",
                "bleu": ev.bleu_sent,
                "chrf": ev.chrf_sent,
                "comet": ev.comet,
                "kiwi": ev.kiwi,
                "src_text": meta.src_text if meta else "",
                "ref_text": meta.ref_text if meta else "",
            }
        )
    return write_csv(path, rows)


def read_evaluations_csv(
    path: str | Path,
) -> tuple[list[SegmentEvaluation], dict[str, SegmentInfo]]:
    evaluations = []
    info: dict[str, SegmentInfo] = {}
    for row in read_csv_rows(path):
        evaluations.append(
            SegmentEvaluation(
                segment_id=row["segment_id"],
                system=row["system"],
                shots=int(row["shots"]),
                bleu_sent=float(row["bleu"]),
                chrf_sent=float(row["chrf"]),
                comet=None if row["comet"] in ("", "n/a") else float(row["comet"]),
                kiwi=None if row["kiwi"] in ("", "n/a") else float(row["kiwi"]),
            )
        )
        key = row["segment_id"]
        if key not in info:
            info[key] = SegmentInfo(
                pair=row["pair"],
                domain=row["domain"],
                src_text=row.get("src_text", ""),
                ref_text=row.get("ref_text", ""),
            )
    return evaluations, info
