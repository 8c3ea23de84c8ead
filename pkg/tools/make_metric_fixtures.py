#!/usr/bin/env python3
"""Regenerate the metric oracle fixtures under tests/fixtures/metrics/.

Each fixture is 50 hypothesis/reference pairs in one language style plus
expected scores computed by an independent reference scorer (sacrebleu's
classic implementation). Pass `--scorer-path` to point at a sacrebleu-style
module file, or have `sacrebleu` importable; without a scorer the pairs are
rewritten but the frozen expected values are left untouched.

The committed fixtures were produced with the classic scorer configured as:
corpus BLEU 13a/unsmoothed (verified equal to exp-smoothed on these pairs),
sentence BLEU 13a/exp-smoothed with effective order, chrF order 6 / beta 2 on
whitespace-stripped text.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import random
from pathlib import Path

STYLES = {
    "en-de": {
        "words": [
            "der", "die", "das", "Hund", "Katze", "Haus", "schläft", "läuft",
            "im", "Garten", "schnell", "über", "Straße", "große", "kleine",
            "Verordnung", "Kommission", "Nr.", "538/2000", "enthält", "und",
            "oder", "nicht", "heute", "morgen", "Übersetzung", "Qualität",
            "Maßnahme", "europäische", "Bericht", "wurde", "angenommen",
        ],
    },
    "pt-en": {
        "words": [
            "the", "a", "committee", "approved", "report", "on", "translation",
            "quality", "yesterday", "mice", "are", "no", "longer", "diabetic",
            "he", "added", "we", "now", "have", "older", "regulation",
            "council", "member", "states", "shall", "apply", "measures",
            "against", "12.5", "percent", "and", "increase",
        ],
    },
    "ru-en": {
        "words": [
            "комитет", "утвердил", "доклад", "о", "качестве", "перевода",
            "вчера", "сегодня", "мы", "имеем", "мышей", "которые", "больше",
            "не", "являются", "диабетиками", "добавил", "он", "регламент",
            "совета", "применяется", "ко", "всем", "государствам", "и",
            "увеличение", "на", "12,5", "процента",
        ],
    },
}

N_PAIRS = 50


def build_pairs(style: str, seed: int = 20240501) -> list[dict[str, str]]:
    rng = random.Random(f"{style}:{seed}")
    words = STYLES[style]["words"]

    def sentence(min_len: int = 4, max_len: int = 16) -> str:
        n = rng.randrange(min_len, max_len + 1)
        tokens = [rng.choice(words) for _ in range(n)]
        text = " ".join(tokens)
        if rng.random() < 0.6:
            text += rng.choice([".", "?", "!", ","])
        return text

    pairs = []
    for i in range(N_PAIRS):
        ref = sentence()
        tokens = ref.split()
        if i % 10 == 0:
            hyp = ref  # exact matches keep the top of the score range populated
        else:
            kept = [t for t in tokens if rng.random() > 0.12]
            if not kept:
                kept = tokens[:1]
            if rng.random() < 0.5:
                kept[rng.randrange(len(kept))] = rng.choice(words)
            if rng.random() < 0.3 and len(kept) > 2:
                j = rng.randrange(len(kept) - 1)
                kept[j], kept[j + 1] = kept[j + 1], kept[j]
            hyp = " ".join(kept)
        pairs.append({"hyp": hyp, "ref": ref})
    return pairs


def _load_scorer(path: str | None):
    if path:
        spec = importlib.util.spec_from_file_location("reference_scorer", path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)  # type: ignore[union-attr]
        return module
    try:
        import sacrebleu  # type: ignore

        return sacrebleu
    except ImportError:
        return None


def expected_scores(scorer, pairs: list[dict[str, str]]) -> dict:
    hyps = [p["hyp"] for p in pairs]
    refs = [p["ref"] for p in pairs]
    corpus_none = scorer.corpus_bleu(hyps, [refs], smooth="none", tokenize="13a").score
    corpus_exp = scorer.corpus_bleu(hyps, [refs], smooth="exp", tokenize="13a").score
    assert abs(corpus_none - corpus_exp) < 1e-9, (
        "fixture must have matches at every n-gram order so smoothing is a no-op"
    )
    chrf = scorer.corpus_chrf(hyps, refs)
    chrf = float(chrf.score if hasattr(chrf, "score") else chrf)
    if chrf <= 1.0:
        chrf *= 100.0
    sent_bleu = [
        scorer.corpus_bleu([h], [[r]], smooth="exp", use_effective_order=True,
                           tokenize="13a").score
        for h, r in zip(hyps, refs)
    ]
    sent_chrf = []
    for h, r in zip(hyps, refs):
        value = scorer.sentence_chrf(h, r)
        value = float(value.score if hasattr(value, "score") else value)
        sent_chrf.append(value * 100.0 if value <= 1.0 else value)
    return {
        "corpus_bleu": round(corpus_none, 8),
        "corpus_chrf": round(chrf, 8),
        "sentence_bleu": [round(v, 8) for v in sent_bleu],
        "sentence_chrf": [round(v, 8) for v in sent_chrf],
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests/fixtures/metrics"
    )
    parser.add_argument("--scorer-path", help="path to a sacrebleu-style module file")
    args = parser.parse_args()

    scorer = _load_scorer(args.scorer_path)
    args.out.mkdir(parents=True, exist_ok=True)
    for style in STYLES:
        pairs = build_pairs(style)
        out_path = args.out / f"{style}.json"
        fixture = {"style": style, "pairs": pairs}
        if scorer is not None:
            fixture["expected"] = expected_scores(scorer, pairs)
            fixture["scorer"] = "community mteval-13a scorer (sacrebleu lineage)"
        elif out_path.exists():
            old = json.loads(out_path.read_text(encoding="utf-8"))
            fixture["expected"] = old.get("expected")
            fixture["scorer"] = old.get("scorer")
            print(f"{style}: no scorer available, kept frozen expected values")
        out_path.write_text(
            json.dumps(fixture, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
