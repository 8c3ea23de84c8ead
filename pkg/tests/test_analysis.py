from __future__ import annotations

from collections import Counter

import pytest

from mtpipe.analysis import (
    AnalysisError,
    IdMismatchError,
    SegmentInfo,
    aggregate_report,
    compute_deltas,
    delta_histogram,
    format_rate,
    hallucination_rate,
    hallucination_table,
    length_distribution,
    read_csv_rows,
    read_evaluations_csv,
    top_deltas,
    total_variation,
    write_aggregate_csvs,
    write_csv,
    write_delta_outputs,
    write_evaluations_csv,
    write_hallucination_csv,
    write_length_csvs,
)
from mtpipe.generation import GenerationResult
from mtpipe.metrics import SegmentEvaluation


def evaluation(seg_id: str, shots: int, comet: float, system: str = "lora") -> SegmentEvaluation:
    return SegmentEvaluation(
        segment_id=seg_id, system=system, shots=shots,
        bleu_sent=30.0, chrf_sent=50.0, comet=comet,
    )


def result(row: int, tokens: int, finish: str = "eos", seg: str | None = None) -> GenerationResult:
    return GenerationResult(
        row=row,
        segment_id=seg or f"s{row}",
        raw_output="x " * tokens,
        translation=("x " * tokens).strip(),
        finish=finish,
        raw_token_count=tokens,
        translation_token_count=tokens,
    )


class TestDeltas:
    def test_delta_is_exact_difference(self):
        records = compute_deltas(
            [evaluation("s1", 0, 80.0)], [evaluation("s1", 5, 85.0)], metric="comet"
        )
        assert records[0].delta == 5.0
        assert records[0].score_zero == 80.0 and records[0].score_few == 85.0

    def test_identical_sets_give_zero_deltas_in_first_bin(self):
        zero = [evaluation(f"s{i}", 0, 70.0 + i) for i in range(10)]
        few = [evaluation(f"s{i}", 5, 70.0 + i) for i in range(10)]
        records = compute_deltas(zero, few)
        assert all(r.delta == 0.0 for r in records)
        hist = delta_histogram(records)
        assert hist == [(0.0, 1.0, 10)]

    def test_outlier_leads_top_listing(self):
        zero = [evaluation(f"s{i}", 0, 50.0) for i in range(5)]
        few = [evaluation(f"s{i}", 5, 51.0) for i in range(5)]
        few[2] = evaluation("s2", 5, 90.0)  # +40 outlier
        ranked = top_deltas(compute_deltas(zero, few), k=3)
        assert ranked[0].segment_id == "s2"
        assert ranked[0].delta == 40.0

    def test_id_mismatch_lists_missing(self):
        with pytest.raises(IdMismatchError) as excinfo:
            compute_deltas([evaluation("a", 0, 1.0)], [evaluation("b", 5, 1.0)])
        assert excinfo.value.missing_in_zero == ["b"]
        assert excinfo.value.missing_in_few == ["a"]

    def test_absent_metric_is_an_error(self):
        bare = SegmentEvaluation("s1", "sys", 0, bleu_sent=10.0, chrf_sent=10.0)
        with pytest.raises(AnalysisError, match="absent"):
            compute_deltas([bare], [bare], metric="comet")

    def test_outputs_written_and_reparse(self, tmp_path):
        import json

        zero = [evaluation(f"s{i}", 0, 50.0 + i) for i in range(8)]
        few = [evaluation(f"s{i}", 5, 53.0 + i) for i in range(8)]
        info = {f"s{i}": SegmentInfo("de-en", "law", f"src {i}", f"ref {i}") for i in range(8)}
        records = compute_deltas(zero, few, info=info)
        counts = write_delta_outputs(records, tmp_path, "comet", info=info, top_k=3)
        assert counts["deltas.csv"] == 8
        assert counts["delta_top.jsonl"] == 3
        rows = read_csv_rows(tmp_path / "deltas.csv")
        assert len(rows) == 8
        assert {r["pair"] for r in rows} == {"de-en"}
        hist_rows = read_csv_rows(tmp_path / "delta_histogram.csv")
        assert sum(int(r["count"]) for r in hist_rows) == 8
        # inspection listing carries the full texts
        listing = [
            json.loads(line)
            for line in (tmp_path / "delta_top.jsonl").read_text().splitlines()
        ]
        assert all(e["src_text"].startswith("src ") for e in listing)
        assert all(e["ref_text"].startswith("ref ") for e in listing)


class TestHallucination:
    def test_direct_threshold_application(self):
        zero = {"a": 35.0, "b": 40.0, "c": 10.0}
        few = {"a": 2.0, "b": 10.0, "c": 1.0}
        report = hallucination_rate(zero, few)
        assert report.overall.n_flagged == 1
        assert report.overall.rate == pytest.approx(1 / 3)
        assert report.flagged_ids == ["a"]

    def test_exact_boundary_is_not_flagged(self):
        report = hallucination_rate({"a": 30.0}, {"a": 3.0})
        assert report.overall.n_flagged == 0

    def test_just_past_boundary_is_flagged(self):
        report = hallucination_rate({"a": 30.01}, {"a": 2.99})
        assert report.overall.n_flagged == 1

    def test_empty_input_reports_na_not_zero(self):
        report = hallucination_rate({}, {})
        assert report.overall.rate is None
        assert format_rate(report.overall.rate) == "n/a"

    def test_monotone_in_hi_and_antimonotone_in_lo(self):
        zero = {f"s{i}": float(i) for i in range(0, 100, 5)}
        few = {f"s{i}": float(i) / 12.0 for i in range(0, 100, 5)}
        flags = lambda hi, lo: hallucination_rate(zero, few, hi=hi, lo=lo).overall.n_flagged
        assert flags(20, 3) >= flags(30, 3) >= flags(40, 3)
        assert flags(30, 2) <= flags(30, 3) <= flags(30, 4)

    def test_table_shape_is_domains_by_systems(self, tmp_path):
        domains = ["Flores", "Medical", "Law", "Tico", "Chat"]
        info = {}
        zero, few = {}, {}
        for d_index, domain in enumerate(domains):
            for i in range(20):
                seg = f"{domain}-{i}"
                info[seg] = SegmentInfo("de-en", domain)
                zero[seg] = 50.0 if i < 2 and domain == "Law" else 20.0
                few[seg] = 1.0 if i < 2 and domain == "Law" else 20.0
        reports = {
            "ft_without_examples": hallucination_rate(zero, few, info=info),
            "ft_with_examples": hallucination_rate(zero, {k: 20.0 for k in few}, info=info),
        }
        header, rows = hallucination_table(reports)
        assert header == ["domain", "ft_with_examples", "ft_without_examples"]
        assert [r[0] for r in rows] == sorted(domains) + ["(all)"]
        law_row = next(r for r in rows if r[0] == "Law")
        assert law_row[2] == "10.00%"  # 2 of 20 flagged
        assert law_row[1] == "0.00%"
        write_hallucination_csv(tmp_path / "h.csv", reports)
        assert read_csv_rows(tmp_path / "h.csv")[0]["domain"] in sorted(domains)


class TestLengths:
    def test_all_eos_fixture_has_zero_overgeneration(self):
        results = {"finetuned": [result(i, 10) for i in range(20)]}
        report = length_distribution(results, [10] * 20)
        assert report.overgeneration["finetuned"] == 0.0

    def test_all_newline_fixture_has_full_overgeneration(self):
        results = {"pretrained": [result(i, 10, finish="newline_truncated") for i in range(20)]}
        report = length_distribution(results, [10] * 20)
        assert report.overgeneration["pretrained"] == 1.0

    def test_identical_distributions_have_zero_divergence(self):
        lengths = [4, 7, 7, 9, 12]
        results = {"sys": [result(i, n) for i, n in enumerate(lengths)]}
        report = length_distribution(results, lengths)
        assert report.total_variation["sys"] == 0.0

    def test_disjoint_distributions_have_unit_divergence(self):
        assert total_variation(Counter([1, 1]), Counter([5, 6])) == 1.0

    def test_csvs_written(self, tmp_path):
        results = {"sys": [result(i, 5 + i % 3) for i in range(9)]}
        report = length_distribution(results, [5, 6, 7])
        counts = write_length_csvs(report, tmp_path)
        assert counts["length_summary.csv"] == 1
        rows = read_csv_rows(tmp_path / "length_histogram.csv")
        assert {r["system"] for r in rows} == {"sys", "reference"}


class TestAggregate:
    def test_single_segment_mean_is_its_score(self):
        report = aggregate_report([evaluation("s1", 0, 80.0)], {"s1": SegmentInfo("de-en")})
        row = next(r for r in report.long_rows if r["metric"] == "comet")
        assert row["value"] == 80.0

    def test_two_segment_mean(self):
        evals = [evaluation("s1", 0, 80.0), evaluation("s2", 0, 90.0)]
        info = {"s1": SegmentInfo("de-en"), "s2": SegmentInfo("de-en")}
        report = aggregate_report(evals, info)
        row = next(r for r in report.long_rows if r["metric"] == "comet")
        assert row["value"] == 85.0

    def test_means_invariant_to_row_order(self):
        evals = [evaluation(f"s{i}", 0, 70.0 + i) for i in range(10)]
        info = {f"s{i}": SegmentInfo("de-en") for i in range(10)}
        forward = aggregate_report(evals, info)
        backward = aggregate_report(list(reversed(evals)), info)
        assert forward.long_rows == backward.long_rows

    def test_pivot_shape(self):
        evals = [
            evaluation("s1", 0, 80.0, system="lora"),
            evaluation("s1", 5, 82.0, system="lora"),
        ]
        info = {"s1": SegmentInfo("de-en")}
        report = aggregate_report(evals, info)
        assert [list(r.keys()) for r in report.pivot_rows] == [
            ["pair", "system", "shots", "comet", "kiwi", "bleu", "chrf"]
        ] * 2
        assert [r["shots"] for r in report.pivot_rows] == [0, 5]

    def test_missing_cells_render_na(self, tmp_path):
        bare = SegmentEvaluation("s1", "sys", 0, bleu_sent=10.0, chrf_sent=20.0)
        report = aggregate_report([bare], {"s1": SegmentInfo("de-en")})
        write_aggregate_csvs(report, tmp_path)
        pivot = read_csv_rows(tmp_path / "scores_pivot.csv")
        assert pivot[0]["comet"] == "n/a"
        assert pivot[0]["bleu"] == "10.0"

    def test_signature_comment_embedded_and_skipped_by_reader(self, tmp_path):
        report = aggregate_report(
            [evaluation("s1", 0, 80.0)], {"s1": SegmentInfo("de-en")}
        )
        write_aggregate_csvs(report, tmp_path)
        raw = (tmp_path / "scores_long.csv").read_text(encoding="utf-8")
        assert raw.startswith("# ") and "tok:13a" in raw.splitlines()[0]
        rows = read_csv_rows(tmp_path / "scores_long.csv")
        assert rows[0]["system"] == "lora"
        assert {r["metric"] for r in rows} == {"comet", "kiwi", "bleu", "chrf"}


class TestCsvRoundTrip:
    def test_write_read_round_trip(self, tmp_path):
        rows = [{"a": "x,y", "b": 'quote "inside"', "c": 1.5}, {"a": "", "b": None, "c": 0}]
        write_csv(tmp_path / "t.csv", rows)
        back = read_csv_rows(tmp_path / "t.csv")
        assert back[0]["a"] == "x,y"
        assert back[0]["b"] == 'quote "inside"'
        assert back[1]["b"] == "n/a"

    def test_evaluations_round_trip(self, tmp_path):
        evals = [
            evaluation("s1", 0, 88.0),
            SegmentEvaluation("s2", "lora", 5, bleu_sent=1.0, chrf_sent=2.0),
        ]
        info = {
            "s1": SegmentInfo("de-en", "law"),
            "s2": SegmentInfo("fr-en", "chat"),
        }
        write_evaluations_csv(tmp_path / "e.csv", evals, info)
        back_evals, back_info = read_evaluations_csv(tmp_path / "e.csv")
        assert back_evals == evals
        assert back_info["s1"].pair == "de-en"
        assert back_info["s2"].domain == "chat"
