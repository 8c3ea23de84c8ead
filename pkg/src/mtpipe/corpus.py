"""Parallel-corpus ingestion, quality filtering, and per-pair pool sampling.

Segments arrive with precomputed quality scores (cleaner score plus one
quality-estimation score per direction). Filtering is a single conjunctive
predicate; sampling uses per-pair reservoirs so arbitrarily large streams fit
in bounded memory. All randomness derives from an explicit seed.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from mtpipe.util import derive_rng, read_jsonl, write_jsonl

REASON_BICLEANER_LOW = "bicleaner_low"
REASON_KIWI_FWD_LOW = "kiwi_fwd_low"
REASON_KIWI_REV_LOW = "kiwi_rev_low"
REASON_MISSING_SCORE = "missing_score"

DEFAULT_EXAMPLE_POOL_SIZE = 5_000

_SEGMENT_FIELDS = (
    "id",
    "src_lang",
    "tgt_lang",
    "src_text",
    "tgt_text",
    "bicleaner",
    "kiwi_fwd",
    "kiwi_rev",
    "domain",
)


class CorpusError(ValueError):
    """Invalid segment, config, or corpus file."""


class EmptyMixtureError(CorpusError):
    """All pools empty; nothing to mix."""


@dataclass(frozen=True)
class LangPair:
    """A translation direction, e.g. de -> en."""

    src: str
    tgt: str

    def __post_init__(self) -> None:
        for code in (self.src, self.tgt):
            if not code or not code.isascii() or not code.islower():
                raise CorpusError(f"language code must be nonempty lowercase ASCII: {code!r}")
        if self.src == self.tgt:
            raise CorpusError(f"source and target language must differ: {self.src!r}")

    @property
    def code(self) -> str:
        return f"{self.src}-{self.tgt}"

    @classmethod
    def from_code(cls, code: str) -> "LangPair":
        src, sep, tgt = code.partition("-")
        if not sep:
            raise CorpusError(f"expected '<src>-<tgt>' language pair, got {code!r}")
        return cls(src, tgt)


@dataclass(frozen=True)
class ParallelSegment:
    """One aligned sentence pair with optional quality scores."""

    id: str
    pair: LangPair
    src_text: str
    tgt_text: str
    bicleaner: float | None = None
    kiwi_fwd: float | None = None
    kiwi_rev: float | None = None
    domain_tag: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("segment id must be nonempty")
        if not self.src_text.strip() or not self.tgt_text.strip():
            raise CorpusError(f"segment {self.id}: src_text and tgt_text must be nonempty")
        for name in ("bicleaner", "kiwi_fwd", "kiwi_rev"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise CorpusError(f"segment {self.id}: {name}={value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "src_lang": self.pair.src,
            "tgt_lang": self.pair.tgt,
            "src_text": self.src_text,
            "tgt_text": self.tgt_text,
            "bicleaner": self.bicleaner,
            "kiwi_fwd": self.kiwi_fwd,
            "kiwi_rev": self.kiwi_rev,
            "domain": self.domain_tag,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "ParallelSegment":
        return cls(
            id=str(row["id"]),
            pair=LangPair(str(row["src_lang"]), str(row["tgt_lang"])),
            src_text=str(row["src_text"]),
            tgt_text=str(row["tgt_text"]),
            bicleaner=_opt_score(row.get("bicleaner")),
            kiwi_fwd=_opt_score(row.get("kiwi_fwd")),
            kiwi_rev=_opt_score(row.get("kiwi_rev")),
            domain_tag=str(row.get("domain") or ""),
        )


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds and sampling knobs for the filtering recipe."""

    seed: int
    bicleaner_min: float = 0.85
    kiwi_min: float = 0.80
    per_pair_cap: int = 250_000

    def __post_init__(self) -> None:
        for name in ("bicleaner_min", "kiwi_min"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise CorpusError(f"{name}={value} outside [0, 1]")
        if self.per_pair_cap < 1:
            raise CorpusError(f"per_pair_cap must be >= 1, got {self.per_pair_cap}")
        if not 0 <= self.seed < 2**64:
            raise CorpusError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None


def filter_segment(segment: ParallelSegment, config: FilterConfig) -> FilterDecision:
    """Keep a segment iff all three scores are present and meet their thresholds.

    Comparisons are >= so exact-threshold segments survive; a single absent
    score drops the segment (fail safe on malformed inputs).
    """
    if segment.bicleaner is None or segment.kiwi_fwd is None or segment.kiwi_rev is None:
        return FilterDecision(False, REASON_MISSING_SCORE)
    if segment.bicleaner < config.bicleaner_min:
        return FilterDecision(False, REASON_BICLEANER_LOW)
    if segment.kiwi_fwd < config.kiwi_min:
        return FilterDecision(False, REASON_KIWI_FWD_LOW)
    if segment.kiwi_rev < config.kiwi_min:
        return FilterDecision(False, REASON_KIWI_REV_LOW)
    return FilterDecision(True)


class _Reservoir:
    """Algorithm-R reservoir. `offer` returns the displaced item, if any.

    Once full, an arriving item either evicts a resident (the evictee is
    returned) or is itself returned. Residents form a uniform sample of
    everything offered so far.
    """

    __slots__ = ("capacity", "items", "seen")

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.items: list[ParallelSegment] = []
        self.seen = 0

    def offer(self, item: ParallelSegment, rng: random.Random) -> ParallelSegment | None:
        if self.capacity == 0:
            return item
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
            return None
        slot = rng.randrange(self.seen)
        if slot < self.capacity:
            evicted = self.items[slot]
            self.items[slot] = item
            return evicted
        return item


@dataclass
class PairPools:
    pair: LangPair
    training: list[ParallelSegment] = field(default_factory=list)
    examples: list[ParallelSegment] = field(default_factory=list)


@dataclass
class PoolSet:
    pools: dict[str, PairPools] = field(default_factory=dict)
    warnings: list[dict] = field(default_factory=list)

    def nonempty_training(self) -> dict[str, PairPools]:
        return {code: p for code, p in self.pools.items() if p.training}


def sample_pool(
    segments: Iterable[ParallelSegment],
    config: FilterConfig,
    example_pool_size: int = DEFAULT_EXAMPLE_POOL_SIZE,
    expected_pairs: Sequence[LangPair] = (),
) -> PoolSet:
    """Single-pass per-pair sampling of an (already filtered) segment stream.

    The example pool is held out first: each arriving segment is offered to the
    example reservoir, and only segments it rejects or evicts cascade into the
    training reservoir. Both pools are therefore uniform samples, disjoint by
    construction, and the training pool is a uniform sample of the survivors
    that did not end up as examples.

    Deterministic given `config.seed` and the input order. Pairs listed in
    `expected_pairs` that end up with no surviving segments produce a warning
    record instead of an error.
    """
    states: dict[str, tuple[LangPair, _Reservoir, _Reservoir, random.Random]] = {}
    for segment in segments:
        code = segment.pair.code
        if code not in states:
            states[code] = (
                segment.pair,
                _Reservoir(example_pool_size),
                _Reservoir(config.per_pair_cap),
                derive_rng(config.seed, "pool", code),
            )
        _, example_res, train_res, rng = states[code]
        overflow = example_res.offer(segment, rng)
        if overflow is not None:
            train_res.offer(overflow, rng)

    result = PoolSet()
    for code, (pair, example_res, train_res, _) in states.items():
        result.pools[code] = PairPools(pair, training=train_res.items, examples=example_res.items)
    for pair in expected_pairs:
        if pair.code not in result.pools:
            result.pools[pair.code] = PairPools(pair)
            result.warnings.append({"pair": pair.code, "warning": "empty_pool"})
    return result


def filter_and_sample(
    segments: Iterable[ParallelSegment],
    config: FilterConfig,
    example_pool_size: int = DEFAULT_EXAMPLE_POOL_SIZE,
) -> tuple[PoolSet, dict]:
    """Apply `filter_segment` then `sample_pool`, tracking drop statistics.

    Returns the pools and a stats dict with per-reason drop counts plus
    per-pair input/survivor counts. Pairs seen in the input whose segments are
    all dropped yield an `empty_pool` warning on the pool set.
    """
    drop_counts: dict[str, int] = {}
    pair_seen: dict[str, int] = {}
    pair_kept: dict[str, int] = {}
    pairs_in_input: dict[str, LangPair] = {}

    def survivors() -> Iterator[ParallelSegment]:
        for segment in segments:
            code = segment.pair.code
            pairs_in_input.setdefault(code, segment.pair)
            pair_seen[code] = pair_seen.get(code, 0) + 1
            decision = filter_segment(segment, config)
            if decision.keep:
                pair_kept[code] = pair_kept.get(code, 0) + 1
                yield segment
            else:
                assert decision.reason is not None
                drop_counts[decision.reason] = drop_counts.get(decision.reason, 0) + 1

    pools = sample_pool(
        survivors(), config, example_pool_size=example_pool_size, expected_pairs=[]
    )
    for code, pair in pairs_in_input.items():
        if code not in pools.pools:
            pools.pools[code] = PairPools(pair)
            pools.warnings.append({"pair": code, "warning": "empty_pool"})
    stats = {
        "input_rows": sum(pair_seen.values()),
        "dropped": drop_counts,
        "per_pair_seen": dict(sorted(pair_seen.items())),
        "per_pair_kept": dict(sorted(pair_kept.items())),
    }
    return pools, stats


def mixture_iterator(
    pools: dict[str, PairPools] | PoolSet, seed: int
) -> Iterator[tuple[LangPair, ParallelSegment]]:
    """Infinite stream mixing language pairs uniformly, then segments uniformly.

    Each draw picks a pair uniformly among pools with a nonempty training set,
    then a segment uniformly within that pool, so every pair is seen a similar
    number of times regardless of pool sizes. Deterministic given `seed`.
    """
    if isinstance(pools, PoolSet):
        pools = pools.pools
    nonempty = sorted(code for code, pool in pools.items() if pool.training)
    if not nonempty:
        raise EmptyMixtureError("empty_mixture: no pool has training segments")
    rng = random.Random(seed)
    while True:
        code = nonempty[rng.randrange(len(nonempty))]
        pool = pools[code]
        segment = pool.training[rng.randrange(len(pool.training))]
        yield pool.pair, segment


def _opt_score(value: object) -> float | None:
    if value is None or value == "":
        return None
    try:
        return float(value)  # type: ignore[arg-type]
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"expected a numeric score, got {value!r}") from exc


def read_segments(path: str | Path) -> Iterator[ParallelSegment]:
    """Read segments from TSV (header row, empty string = missing score) or JSONL."""
    path = Path(path)
    if path.suffix.lower() == ".tsv":
        yield from _read_tsv(path)
    else:
        for lineno, row in enumerate(read_jsonl(path), 1):
            try:
                yield ParallelSegment.from_dict(row)
            except (CorpusError, KeyError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc


def _read_tsv(path: Path) -> Iterator[ParallelSegment]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        missing = set(_SEGMENT_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise CorpusError(f"{path}: missing TSV columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                yield ParallelSegment.from_dict(row)
            except (CorpusError, KeyError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc


def write_pool_files(pools: PoolSet, out_dir: str | Path) -> dict[str, int]:
    """Write per-pair training/example JSONL pools plus a warnings stream.

    Returns row counts keyed by relative file name.
    """
    out_dir = Path(out_dir)
    counts: dict[str, int] = {}
    for code in sorted(pools.pools):
        pool = pools.pools[code]
        train_name = f"{code}.train.jsonl"
        example_name = f"{code}.examples.jsonl"
        counts[train_name] = write_jsonl(
            out_dir / train_name, (s.to_dict() for s in pool.training)
        )
        counts[example_name] = write_jsonl(
            out_dir / example_name, (s.to_dict() for s in pool.examples)
        )
    counts["warnings.jsonl"] = write_jsonl(out_dir / "warnings.jsonl", pools.warnings)
    return counts


def read_pool_files(pool_dir: str | Path) -> PoolSet:
    """Load a pool directory produced by `write_pool_files`."""
    pool_dir = Path(pool_dir)
    result = PoolSet()
    for train_path in sorted(pool_dir.glob("*.train.jsonl")):
        code = train_path.name[: -len(".train.jsonl")]
        pair = LangPair.from_code(code)
        training = [ParallelSegment.from_dict(r) for r in read_jsonl(train_path)]
        example_path = pool_dir / f"{code}.examples.jsonl"
        examples = (
            [ParallelSegment.from_dict(r) for r in read_jsonl(example_path)]
            if example_path.exists()
            else []
        )
        result.pools[code] = PairPools(pair, training=training, examples=examples)
    warnings_path = pool_dir / "warnings.jsonl"
    if warnings_path.exists():
        result.warnings = list(read_jsonl(warnings_path))
    return result


def with_scores(
    segment: ParallelSegment,
    bicleaner: float | None = None,
    kiwi_fwd: float | None = None,
    kiwi_rev: float | None = None,
) -> ParallelSegment:
    """Copy of `segment` with the given scores replaced."""
    return replace(segment, bicleaner=bicleaner, kiwi_fwd=kiwi_fwd, kiwi_rev=kiwi_rev)
