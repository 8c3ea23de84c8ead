#!/usr/bin/env python3
"""Regenerate the shipped sample corpus (data/sample_corpus.tsv, 1,000 rows)
and test set (data/sample_test.tsv, 40 rows).

Scores are planted in a fixed 10-row cycle so the survivor set under the
default 0.85/0.80/0.80 filter is analytically determined: per 10 rows, four
survive (two with comfortable margins, one exactly at the thresholds, one
high-scoring), and the rest are dropped for a specific reason (one low
cleaner score, one low forward QE, one low reverse QE, two with a missing
score, one failing two thresholds at once). That gives exactly 400 survivors
(200 per language pair).
"""

from __future__ import annotations

import random
from pathlib import Path

VOCAB = {
    "de": [
        "der", "hund", "katze", "haus", "garten", "straße", "bericht",
        "kommission", "verordnung", "qualität", "übersetzung", "schnell",
        "heute", "läuft", "schläft", "große", "maßnahme", "enthält",
    ],
    "fr": [
        "le", "chien", "chat", "maison", "jardin", "rue", "rapport",
        "commission", "règlement", "qualité", "traduction", "vite",
        "aujourd'hui", "court", "dort", "grande", "mesure", "contient",
    ],
    "en": [
        "the", "dog", "cat", "house", "garden", "street", "report",
        "commission", "regulation", "quality", "translation", "quickly",
        "today", "runs", "sleeps", "large", "measure", "contains",
    ],
}

DOMAINS = ["flores", "medical", "law", "tico", "chat"]
PAIRS = [("de", "en"), ("fr", "en")]
ROWS_PER_PAIR = 500
TEST_ROWS_PER_PAIR = 20

HEADER = "id\tsrc_lang\ttgt_lang\tsrc_text\ttgt_text\tbicleaner\tkiwi_fwd\tkiwi_rev\tdomain"


def _sentence(lang: str, rng: random.Random) -> str:
    words = VOCAB[lang]
    n = rng.randrange(4, 11)
    text = " ".join(rng.choice(words) for _ in range(n))
    return text[0].upper() + text[1:] + "."


def _scores(slot: int, rng: random.Random) -> tuple[str, str, str]:
    def good() -> str:
        return f"{rng.uniform(0.86, 0.99):.4f}"

    def good_kiwi() -> str:
        return f"{rng.uniform(0.81, 0.99):.4f}"

    if slot in (0, 7, 8):  # comfortable pass
        return good(), good_kiwi(), good_kiwi()
    if slot == 1:  # exact threshold boundary, still a keep
        return "0.85", "0.80", "0.80"
    if slot == 2:  # cleaner score below threshold
        return f"{rng.uniform(0.10, 0.84):.4f}", good_kiwi(), good_kiwi()
    if slot == 3:  # forward QE below threshold
        return good(), f"{rng.uniform(0.10, 0.79):.4f}", good_kiwi()
    if slot == 4:  # reverse QE below threshold
        return good(), good_kiwi(), f"{rng.uniform(0.10, 0.79):.4f}"
    if slot == 5:  # cleaner score missing
        return "", good_kiwi(), good_kiwi()
    if slot == 6:  # reverse QE missing
        return good(), good_kiwi(), ""
    # slot 9: two failures at once
    return "0.20", "0.20", good_kiwi()


def main() -> int:
    out_dir = Path(__file__).resolve().parents[1] / "data"
    out_dir.mkdir(exist_ok=True)
    rng = random.Random(90125)

    lines = [HEADER]
    for src, tgt in PAIRS:
        for i in range(ROWS_PER_PAIR):
            bicleaner, kiwi_fwd, kiwi_rev = _scores(i % 10, rng)
            lines.append(
                "\t".join(
                    [
                        f"{src}{tgt}-{i:04d}",
                        src,
                        tgt,
                        _sentence(src, rng),
                        _sentence(tgt, rng),
                        bicleaner,
                        kiwi_fwd,
                        kiwi_rev,
                        DOMAINS[i % len(DOMAINS)],
                    ]
                )
            )
    corpus_path = out_dir / "sample_corpus.tsv"
    corpus_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {corpus_path} ({len(lines) - 1} rows)")

    lines = [HEADER]
    for src, tgt in PAIRS:
        for i in range(TEST_ROWS_PER_PAIR):
            lines.append(
                "\t".join(
                    [
                        f"test-{src}{tgt}-{i:03d}",
                        src,
                        tgt,
                        _sentence(src, rng),
                        _sentence(tgt, rng),
                        "",
                        "",
                        "",
                        DOMAINS[i % len(DOMAINS)],
                    ]
                )
            )
    test_path = out_dir / "sample_test.tsv"
    test_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {test_path} ({len(lines) - 1} rows)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
