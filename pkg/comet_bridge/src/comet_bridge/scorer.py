"""Score (source, hypothesis, reference) triples and emit a score TSV.

The bridge is deliberately dumb: it reads triples from JSONL, runs one
reference-based model and/or one reference-free model over them in batches,
and writes one TSV row per non-skipped input row with the exact header
`segment_id\\tcomet\\tkiwi`. All aggregation and analysis happens downstream
in whatever consumes the TSV.

Model ids:
  - a checkpoint id (e.g. "Unbabel/wmt22-comet-da") loads through the
    `unbabel-comet` package; a missing package or checkpoint is a
    `missing_checkpoint` error
  - "lexical" selects a built-in deterministic character-overlap stand-in,
    useful for offline smoke tests of downstream plumbing (it is NOT a
    quality estimate)
  - "none" leaves that score column empty

Malformed rows (missing fields, or a missing reference when a
reference-based model is requested) are skipped and logged with their line
number, never silently dropped into the output.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

log = logging.getLogger("comet_bridge")

LEXICAL_MODEL = "lexical"
NO_MODEL = "none"

SCORE_HEADER = "segment_id\tcomet\tkiwi"


class BridgeError(RuntimeError):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class Triple:
    segment_id: str
    src: str
    hyp: str
    ref: str | None = None


def _char_ngrams(text: str, n: int) -> Counter:
    squeezed = "".join(text.split())
    return Counter(squeezed[i : i + n] for i in range(len(squeezed) - n + 1))


def _char_overlap_f(a: str, b: str, max_order: int = 4, beta: float = 2.0) -> float:
    """Character n-gram F-score in [0, 1]; 1.0 iff the strings match."""
    precision_sum = recall_sum = orders = 0
    for n in range(1, max_order + 1):
        a_ngrams = _char_ngrams(a, n)
        b_ngrams = _char_ngrams(b, n)
        if not a_ngrams or not b_ngrams:
            continue
        matches = sum((a_ngrams & b_ngrams).values())
        precision_sum += matches / sum(a_ngrams.values())
        recall_sum += matches / sum(b_ngrams.values())
        orders += 1
    if orders == 0:
        return 1.0 if a.strip() == b.strip() else 0.0
    precision = precision_sum / orders
    recall = recall_sum / orders
    if precision + recall == 0.0:
        return 0.0
    beta_sq = beta * beta
    return (1 + beta_sq) * precision * recall / (beta_sq * precision + recall)


class LexicalBackend:
    """Deterministic offline stand-in. Reference mode scores hypothesis/reference
    character overlap; reference-free mode blends a length-ratio prior with the
    (usually cross-lingual, hence weak) hypothesis/source overlap."""

    def __init__(self, reference_based: bool) -> None:
        self.reference_based = reference_based

    def score(self, triples: Sequence[Triple], batch_size: int) -> list[float]:
        del batch_size  # no batching needed
        scores = []
        for triple in triples:
            if self.reference_based:
                assert triple.ref is not None
                scores.append(_char_overlap_f(triple.hyp, triple.ref))
            else:
                ratio = 0.0
                if triple.hyp and triple.src:
                    ratio = min(len(triple.hyp), len(triple.src)) / max(
                        len(triple.hyp), len(triple.src)
                    )
                overlap = _char_overlap_f(triple.hyp, triple.src)
                scores.append(min(1.0, 0.2 + 0.4 * ratio + 0.4 * overlap))
        return scores


class CometBackend:
    """Published checkpoint via the `unbabel-comet` package (CPU by default)."""

    def __init__(self, model_id: str, reference_based: bool) -> None:
        self.reference_based = reference_based
        try:
            from comet import download_model, load_from_checkpoint
        except ImportError as exc:
            raise BridgeError(
                "missing_checkpoint",
                f"model {model_id!r} needs the unbabel-comet package "
                "(pip install 'comet-bridge[comet]')",
            ) from exc
        try:
            checkpoint = download_model(model_id)
            self.model = load_from_checkpoint(checkpoint)
        except Exception as exc:
            raise BridgeError(
                "missing_checkpoint", f"cannot load checkpoint {model_id!r}: {exc}"
            ) from exc

    def score(self, triples: Sequence[Triple], batch_size: int) -> list[float]:
        data = []
        for triple in triples:
            row = {"src": triple.src, "mt": triple.hyp}
            if self.reference_based:
                row["ref"] = triple.ref
            data.append(row)
        output = self.model.predict(data, batch_size=batch_size, gpus=0)
        return [float(s) for s in output.scores]


def make_backend(model_id: str | None, reference_based: bool):
    if model_id is None or model_id == NO_MODEL:
        return None
    if model_id == LEXICAL_MODEL:
        return LexicalBackend(reference_based)
    return CometBackend(model_id, reference_based)


def read_triples(path: str | Path, need_ref: bool) -> tuple[list[Triple], int]:
    """Parse triples, skipping malformed rows with a logged line number."""
    triples: list[Triple] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                segment_id = str(row["segment_id"])
                src = str(row["src"])
                hyp = str(row["hyp"])
                ref = row.get("ref")
                if not segment_id:
                    raise KeyError("segment_id")
                if need_ref and not ref:
                    raise KeyError("ref")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                skipped += 1
                log.warning("line %d: skipping malformed row (%s)", lineno, exc)
                continue
            triples.append(Triple(segment_id, src, hyp, None if ref is None else str(ref)))
    return triples, skipped


def _clamp(score: float) -> float:
    return max(0.0, min(1.0, score))


def score_file(
    input_path: str | Path,
    output_path: str | Path,
    comet_model: str | None = LEXICAL_MODEL,
    kiwi_model: str | None = LEXICAL_MODEL,
    batch_size: int = 8,
) -> dict:
    """Score every well-formed row of `input_path`, write the TSV, return stats.

    Row order is preserved. Scores are clamped to the [0, 1] model range and
    written with 4 decimals; a disabled model leaves its column empty.
    """
    comet_backend = make_backend(comet_model, reference_based=True)
    kiwi_backend = make_backend(kiwi_model, reference_based=False)
    if comet_backend is None and kiwi_backend is None:
        raise BridgeError("no_model", "both models disabled; nothing to score")

    triples, skipped = read_triples(input_path, need_ref=comet_backend is not None)

    comet_scores = comet_backend.score(triples, batch_size) if comet_backend else None
    kiwi_scores = kiwi_backend.score(triples, batch_size) if kiwi_backend else None

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as fh:
        fh.write(SCORE_HEADER + "\n")
        for i, triple in enumerate(triples):
            comet_cell = f"{_clamp(comet_scores[i]):.4f}" if comet_scores else ""
            kiwi_cell = f"{_clamp(kiwi_scores[i]):.4f}" if kiwi_scores else ""
            fh.write(f"{triple.segment_id}\t{comet_cell}\t{kiwi_cell}\n")
    return {"rows": len(triples), "skipped": skipped, "output": str(output_path)}
