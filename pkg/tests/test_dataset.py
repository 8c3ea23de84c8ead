from __future__ import annotations

import json
from collections import Counter

import pytest

from mtpipe.dataset import (
    DatasetError,
    InstructionRecord,
    build_eval_set,
    build_training_set,
    emit_manifest,
    iter_eval_records,
    iter_training_records,
    read_records,
    training_manifest,
)
from mtpipe.sampling import MixturePolicy, MixtureVariant
from mtpipe.templates import TemplateId, parse

from .conftest import DE_EN, FR_EN, make_pool, make_segment, small_pools  # noqa: F401

BALANCED = MixturePolicy(MixtureVariant.BALANCED)


class TestTrainingSet:
    def test_pair_balance_and_shot_histogram(self, small_pools):
        records = list(iter_training_records(small_pools, BALANCED, 6_000, seed=11))
        assert len(records) == 6_000
        pair_counts = Counter(r.pair.code for r in records)
        assert 2_750 <= pair_counts["de-en"] <= 3_250
        assert 2_750 <= pair_counts["fr-en"] <= 3_250
        shot_counts = Counter(r.n_shots for r in records)
        for k in range(6):
            assert 850 <= shot_counts[k] <= 1_150

    def test_zero_records_gives_empty_valid_file(self, small_pools, tmp_path):
        out = tmp_path / "train.jsonl"
        n = build_training_set(small_pools, BALANCED, out, seed=1, n_records=0)
        assert n == 0
        assert out.exists() and out.read_text() == ""

    def test_same_seed_builds_byte_identical_files(self, small_pools, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        build_training_set(small_pools, BALANCED, a, seed=42, n_records=300)
        build_training_set(small_pools, BALANCED, b, seed=42, n_records=300)
        assert a.read_bytes() == b.read_bytes()

    def test_records_satisfy_invariants(self, small_pools):
        by_id = {
            s.id: s
            for pool in small_pools.pools.values()
            for s in pool.training + pool.examples
        }
        for record in iter_training_records(small_pools, BALANCED, 400, seed=3):
            assert record.n_shots == len(record.shot_ids)
            spec = parse(record.prompt)
            assert spec.template is record.template
            assert len(spec.shots) == record.n_shots
            segment = by_id[record.segment_id]
            assert spec.source == segment.src_text
            assert record.completion == " " + segment.tgt_text + "<EOS>"
            # shots come from the held-out example pool of the same pair
            example_ids = {s.id for s in small_pools.pools[record.pair.code].examples}
            training_ids = {s.id for s in small_pools.pools[record.pair.code].training}
            assert set(record.shot_ids) <= example_ids
            assert not set(record.shot_ids) & training_ids
            assert record.segment_id not in record.shot_ids

    def test_record_round_trips_through_jsonl(self, small_pools, tmp_path):
        out = tmp_path / "train.jsonl"
        build_training_set(small_pools, BALANCED, out, seed=5, n_records=50)
        records = list(read_records(out))
        assert len(records) == 50
        assert all(isinstance(r, InstructionRecord) for r in records)

    def test_prompts_rerender_byte_identically(self, small_pools):
        from mtpipe.templates import render

        for record in iter_training_records(small_pools, BALANCED, 100, seed=8):
            assert render(parse(record.prompt)) == record.prompt

    def test_failed_build_emits_no_partial_file(self, small_pools, tmp_path):
        from mtpipe.sampling import SamplingError

        small_pools.pools["fr-en"].examples = small_pools.pools["fr-en"].examples[:3]
        out = tmp_path / "train.jsonl"
        with pytest.raises(SamplingError):
            build_training_set(small_pools, BALANCED, out, seed=5, n_records=500)
        assert not out.exists()
        assert list(tmp_path.iterdir()) == []

    def test_structural_invariants_enforced(self):
        with pytest.raises(DatasetError):
            InstructionRecord(
                prompt="p",
                completion="c",
                pair=DE_EN,
                n_shots=1,
                template=TemplateId.ZERO_SHOT,
                shot_ids=("a",),
                segment_id="s",
                split="train",
            )
        with pytest.raises(DatasetError):
            InstructionRecord(
                prompt="p",
                completion="c",
                pair=DE_EN,
                n_shots=0,
                template=TemplateId.FEW_SHOT_2,
                shot_ids=(),
                segment_id="s",
                split="train",
            )


class TestEvalSet:
    def test_one_record_per_segment_per_setting(self, tmp_path):
        tests = make_pool(25, DE_EN, "test-")
        dev = {"de-en": make_pool(10, DE_EN, "dev-")}
        out = tmp_path / "eval.jsonl"
        n = build_eval_set(tests, dev, out, seed=2, shot_settings=(0, 5))
        assert n == 50
        records = list(read_records(out))
        zero = [r for r in records if r.n_shots == 0]
        five = [r for r in records if r.n_shots == 5]
        assert len(zero) == 25 and len(five) == 25
        assert all(r.template is TemplateId.ZERO_SHOT for r in zero)
        assert all(r.shot_ids == () for r in zero)
        assert all(r.template is TemplateId.FEW_SHOT_2 for r in five)

    def test_full_test_set_size_doubles_under_two_settings(self):
        # 1,012 segments x {0, 5} shots -> 2,024 records
        tests = make_pool(1_012, DE_EN, "flores-")
        dev = {"de-en": make_pool(12, DE_EN, "dev-")}
        records = list(iter_eval_records(tests, dev, seed=4, shot_settings=(0, 5)))
        assert len(records) == 2_024

    def test_segment_in_dev_pool_is_excluded_from_own_shots(self):
        dev = make_pool(7, DE_EN, "shared-")
        target = dev[0]
        records = list(
            iter_eval_records([target], {"de-en": dev}, seed=9, shot_settings=(5,))
        )
        assert len(records) == 1
        assert target.id not in records[0].shot_ids

    def test_insufficient_dev_pool_lists_the_pair(self):
        tests = make_pool(2, FR_EN, "t-")
        with pytest.raises(DatasetError, match="fr-en"):
            list(iter_eval_records(tests, {"fr-en": make_pool(4, FR_EN, "d-")}, seed=1))

    def test_reference_lands_in_completion(self):
        seg = make_segment("t1", tgt_text="The reference.")
        records = list(
            iter_eval_records([seg], {"de-en": make_pool(8, DE_EN, "d-")}, seed=1)
        )
        assert all(r.completion == "The reference." for r in records)
        blind = list(
            iter_eval_records(
                [seg], {"de-en": make_pool(8, DE_EN, "d-")}, seed=1, include_reference=False
            )
        )
        assert all(r.completion == "" for r in blind)


class TestManifest:
    def test_lora_values(self):
        manifest = training_manifest("lora")
        assert manifest["lora_r"] == 256
        assert manifest["lora_alpha"] == 512
        assert manifest["learning_rate"] == 2e-4
        assert manifest["scheduler"] == "linear"
        assert manifest["warmup_steps"] == 500
        assert manifest["dropout"] == 0.05
        assert manifest["batch_size"] == 8
        assert manifest["weight_decay"] == 0.0
        assert manifest["label_smoothing"] == 0.01
        assert manifest["optimizer"] == "AdamW"

    def test_full_ft_values(self):
        manifest = training_manifest("full_ft")
        assert manifest["learning_rate"] == 1e-6
        assert manifest["scheduler"] == "constant"
        assert manifest["warmup_steps"] == 0
        assert manifest["weight_decay"] == 0.0
        assert manifest["batch_size"] == 256
        assert "lora_r" not in manifest

    def test_alpha_tracks_overridden_rank(self):
        manifest = training_manifest("lora", lora_r=128)
        assert manifest["lora_alpha"] == 256

    def test_inconsistent_alpha_rejected(self):
        with pytest.raises(DatasetError):
            training_manifest("lora", lora_r=128, lora_alpha=512)

    def test_unknown_field_rejected(self):
        with pytest.raises(DatasetError):
            training_manifest("full_ft", dropout=0.1)

    def test_emit_writes_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        emit_manifest("lora", path)
        on_disk = json.loads(path.read_text())
        assert on_disk == training_manifest("lora")
