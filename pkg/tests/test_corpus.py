from __future__ import annotations

import json
from collections import Counter
from itertools import islice

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtpipe.corpus import (
    CorpusError,
    EmptyMixtureError,
    FilterConfig,
    LangPair,
    PairPools,
    ParallelSegment,
    PoolSet,
    filter_and_sample,
    filter_segment,
    mixture_iterator,
    read_segments,
    sample_pool,
    with_scores,
    write_pool_files,
    read_pool_files,
)
from mtpipe.util import write_jsonl

from .conftest import DATA_DIR, DE_EN, FR_EN, make_pool, make_segment

CFG = FilterConfig(seed=7)


class TestTypes:
    def test_lang_pair_rejects_same_codes(self):
        with pytest.raises(CorpusError):
            LangPair("de", "de")

    @pytest.mark.parametrize("src,tgt", [("", "en"), ("DE", "en"), ("de", "EN")])
    def test_lang_pair_rejects_bad_codes(self, src, tgt):
        with pytest.raises(CorpusError):
            LangPair(src, tgt)

    def test_segment_rejects_blank_text(self):
        with pytest.raises(CorpusError):
            make_segment(src_text="   ")
        with pytest.raises(CorpusError):
            make_segment(tgt_text="")

    def test_segment_rejects_out_of_range_scores(self):
        with pytest.raises(CorpusError):
            make_segment(bicleaner=1.2)
        with pytest.raises(CorpusError):
            make_segment(kiwi_rev=-0.1)

    def test_filter_config_validation(self):
        with pytest.raises(CorpusError):
            FilterConfig(seed=1, bicleaner_min=1.5)
        with pytest.raises(CorpusError):
            FilterConfig(seed=1, per_pair_cap=0)


class TestFilterSegment:
    def test_exact_threshold_boundary_is_kept(self):
        seg = make_segment(bicleaner=0.85, kiwi_fwd=0.80, kiwi_rev=0.80)
        assert filter_segment(seg, CFG).keep

    def test_bicleaner_below_threshold_drops(self):
        seg = make_segment(bicleaner=0.84, kiwi_fwd=0.99, kiwi_rev=0.99)
        decision = filter_segment(seg, CFG)
        assert not decision.keep
        assert decision.reason == "bicleaner_low"

    def test_absent_score_drops_with_missing_reason(self):
        seg = make_segment(bicleaner=0.90, kiwi_fwd=0.90, kiwi_rev=None)
        decision = filter_segment(seg, CFG)
        assert not decision.keep
        assert decision.reason == "missing_score"

    def test_each_kiwi_direction_has_its_own_reason(self):
        fwd = filter_segment(make_segment(kiwi_fwd=0.5), CFG)
        rev = filter_segment(make_segment(kiwi_rev=0.5), CFG)
        assert (fwd.reason, rev.reason) == ("kiwi_fwd_low", "kiwi_rev_low")

    @given(
        base=st.tuples(
            st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)
        ),
        bumps=st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
    )
    @settings(max_examples=300)
    def test_raising_any_score_never_flips_keep_to_drop(self, base, bumps):
        seg = make_segment(bicleaner=base[0], kiwi_fwd=base[1], kiwi_rev=base[2])
        raised = with_scores(
            seg,
            bicleaner=min(1.0, base[0] + bumps[0]),
            kiwi_fwd=min(1.0, base[1] + bumps[1]),
            kiwi_rev=min(1.0, base[2] + bumps[2]),
        )
        if filter_segment(seg, CFG).keep:
            assert filter_segment(raised, CFG).keep

    @given(
        scores=st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    )
    @settings(max_examples=200)
    def test_kept_segments_recheck_against_thresholds(self, scores):
        seg = make_segment(bicleaner=scores[0], kiwi_fwd=scores[1], kiwi_rev=scores[2])
        if filter_segment(seg, CFG).keep:
            assert seg.bicleaner >= CFG.bicleaner_min
            assert seg.kiwi_fwd >= CFG.kiwi_min
            assert seg.kiwi_rev >= CFG.kiwi_min


class TestSamplePool:
    def test_small_stream_splits_into_disjoint_pools(self):
        segments = make_pool(10)
        pools = sample_pool(iter(segments), CFG, example_pool_size=2)
        pool = pools.pools[DE_EN.code]
        assert len(pool.training) == 8
        assert len(pool.examples) == 2
        assert not {s.id for s in pool.training} & {s.id for s in pool.examples}

    def test_zero_survivors_warns_instead_of_failing(self):
        pools = sample_pool(iter([]), CFG, expected_pairs=[DE_EN])
        assert pools.pools[DE_EN.code].training == []
        assert pools.warnings == [{"pair": "de-en", "warning": "empty_pool"}]

    def test_cap_binds_and_inclusion_is_uniform(self):
        segments = make_pool(1000)
        included: Counter = Counter()
        for seed in range(20):
            pools = sample_pool(
                iter(segments), FilterConfig(seed=seed, per_pair_cap=250), example_pool_size=0
            )
            pool = pools.pools[DE_EN.code]
            assert len(pool.training) == 250
            included.update(s.id for s in pool.training)
        total = sum(included.values())
        empirical = total / (20 * 1000)
        assert abs(empirical - 0.25) <= 0.01
        # Binomial(20, 0.25) makes counts above 15 vanishingly rare
        assert max(included.values()) <= 15

    def test_identical_seed_and_input_reproduce_pools(self):
        segments = make_pool(500)
        cfg = FilterConfig(seed=41, per_pair_cap=100)
        first = sample_pool(iter(segments), cfg, example_pool_size=30)
        second = sample_pool(iter(segments), cfg, example_pool_size=30)
        assert [s.id for s in first.pools["de-en"].training] == [
            s.id for s in second.pools["de-en"].training
        ]
        assert [s.id for s in first.pools["de-en"].examples] == [
            s.id for s in second.pools["de-en"].examples
        ]

    def test_filter_and_sample_reports_drop_reasons(self):
        segments = [
            make_segment("a", bicleaner=0.9),
            make_segment("b", bicleaner=0.2),
            make_segment("c", kiwi_fwd=None),
        ]
        pools, stats = filter_and_sample(iter(segments), CFG, example_pool_size=0)
        assert stats["input_rows"] == 3
        assert stats["dropped"] == {"bicleaner_low": 1, "missing_score": 1}
        assert [s.id for s in pools.pools["de-en"].training] == ["a"]

    def test_all_dropped_pair_gets_empty_pool_warning(self):
        segments = [make_segment("a", bicleaner=0.1)]
        pools, _ = filter_and_sample(iter(segments), CFG)
        assert pools.pools["de-en"].training == []
        assert {"pair": "de-en", "warning": "empty_pool"} in pools.warnings


class TestMixtureIterator:
    def _pools(self) -> PoolSet:
        pools = PoolSet()
        pools.pools["de-en"] = PairPools(DE_EN, training=make_pool(50, DE_EN, "d"))
        pools.pools["fr-en"] = PairPools(FR_EN, training=make_pool(5, FR_EN, "f"))
        return pools

    def test_pairs_are_mixed_uniformly(self):
        counts = Counter(
            pair.code for pair, _ in islice(mixture_iterator(self._pools(), seed=3), 12_000)
        )
        assert 5_700 <= counts["de-en"] <= 6_300
        assert 5_700 <= counts["fr-en"] <= 6_300

    def test_single_pair_gets_every_draw(self):
        pools = PoolSet()
        pools.pools["de-en"] = PairPools(DE_EN, training=make_pool(3))
        draws = list(islice(mixture_iterator(pools, seed=1), 100))
        assert all(pair == DE_EN for pair, _ in draws)

    def test_same_seed_gives_identical_streams(self):
        a = [s.id for _, s in islice(mixture_iterator(self._pools(), seed=9), 500)]
        b = [s.id for _, s in islice(mixture_iterator(self._pools(), seed=9), 500)]
        assert a == b

    def test_all_pools_empty_is_an_error(self):
        pools = PoolSet()
        pools.pools["de-en"] = PairPools(DE_EN)
        with pytest.raises(EmptyMixtureError):
            next(mixture_iterator(pools, seed=0))


class TestIO:
    def test_sample_corpus_reads_completely(self):
        segments = list(read_segments(DATA_DIR / "sample_corpus.tsv"))
        assert len(segments) == 1000
        assert {s.pair.code for s in segments} == {"de-en", "fr-en"}

    def test_jsonl_round_trip(self, tmp_path):
        segments = [make_segment("x1"), make_segment("x2", bicleaner=None)]
        path = tmp_path / "segs.jsonl"
        write_jsonl(path, (s.to_dict() for s in segments))
        back = list(read_segments(path))
        assert back == segments

    def test_tsv_missing_column_is_an_error(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("id\tsrc_lang\n1\tde\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="missing TSV columns"):
            list(read_segments(path))

    def test_pool_files_round_trip(self, tmp_path):
        segments = make_pool(20)
        pools = sample_pool(iter(segments), CFG, example_pool_size=5)
        write_pool_files(pools, tmp_path)
        back = read_pool_files(tmp_path)
        assert [s.id for s in back.pools["de-en"].training] == [
            s.id for s in pools.pools["de-en"].training
        ]
        assert [s.id for s in back.pools["de-en"].examples] == [
            s.id for s in pools.pools["de-en"].examples
        ]

    def test_bad_jsonl_score_is_an_error(self, tmp_path):
        path = tmp_path / "segs.jsonl"
        row = make_segment("x").to_dict()
        row["bicleaner"] = "high"
        path.write_text(json.dumps(row) + "\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            list(read_segments(path))
