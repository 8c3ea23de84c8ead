from __future__ import annotations

from pathlib import Path

import pytest

from mtpipe.corpus import LangPair, PairPools, ParallelSegment, PoolSet

REPO_ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = REPO_ROOT / "data"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"
FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"

DE_EN = LangPair("de", "en")
FR_EN = LangPair("fr", "en")


def make_segment(
    seg_id: str = "s1",
    pair: LangPair = DE_EN,
    src_text: str = "Der Hund schläft.",
    tgt_text: str = "The dog sleeps.",
    bicleaner: float | None = 0.9,
    kiwi_fwd: float | None = 0.9,
    kiwi_rev: float | None = 0.9,
    domain_tag: str = "flores",
) -> ParallelSegment:
    return ParallelSegment(
        id=seg_id,
        pair=pair,
        src_text=src_text,
        tgt_text=tgt_text,
        bicleaner=bicleaner,
        kiwi_fwd=kiwi_fwd,
        kiwi_rev=kiwi_rev,
        domain_tag=domain_tag,
    )


def make_pool(n: int, pair: LangPair = DE_EN, prefix: str = "p") -> list[ParallelSegment]:
    return [
        make_segment(
            seg_id=f"{prefix}{i:04d}",
            pair=pair,
            src_text=f"Satz nummer {i} im quellkorpus.",
            tgt_text=f"Sentence number {i} in the corpus.",
        )
        for i in range(n)
    ]


@pytest.fixture
def small_pools() -> PoolSet:
    pools = PoolSet()
    for pair, prefix in ((DE_EN, "de"), (FR_EN, "fr")):
        pools.pools[pair.code] = PairPools(
            pair,
            training=make_pool(30, pair, prefix=f"{prefix}-train-"),
            examples=make_pool(12, pair, prefix=f"{prefix}-ex-"),
        )
    return pools
