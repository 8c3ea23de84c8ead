"""Command-line entry point: the pipeline as subcommands over a JSON config.

Subcommands: filter, build-train, build-eval, generate, score, analyze,
manifest. Values resolve as flags > config file > defaults; seeds must come
from the config or a flag (there is no wall-clock default). Every run writes
a run-record JSON (config hash, seed, versions, row counts) beside its
outputs, so any two runs with the same config hash and inputs can be checked
for byte-identical results.

Exit codes: 0 success, 1 validation error (bad config, missing input), 2
runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Callable, NoReturn, Sequence

import jsonschema

import mtpipe
from mtpipe import analysis, metrics
from mtpipe.corpus import (
    CorpusError,
    FilterConfig,
    filter_and_sample,
    read_pool_files,
    read_segments,
    write_pool_files,
)
from mtpipe.dataset import (
    DatasetError,
    build_eval_set,
    build_training_set,
    emit_manifest,
    read_records,
)
from mtpipe.generation import (
    DecodingConfig,
    EndpointConfig,
    EndpointUnreachable,
    GenerationError,
    read_results,
    run_batch_from_file,
    whitespace_tokens,
)
from mtpipe.metrics import IngestError, MetricError, SegmentEvaluation, ingest_scores
from mtpipe.sampling import MixturePolicy, MixtureVariant
from mtpipe.templates import DEFAULT_FEW_SHOT, TemplateId, parse as parse_prompt
from mtpipe.util import atomic_write, config_hash

SCHEMA_VERSION = 1

_DEFAULTS: dict[str, Any] = {
    "filter": {
        "bicleaner_min": 0.85,
        "kiwi_min": 0.80,
        "per_pair_cap": 250_000,
        "example_pool_size": 5_000,
    },
    "policy": {"variant": "balanced", "max_shots": 5},
    "dataset": {"template": "few_shot_2"},
    "eval": {"shots": [0, 5], "include_reference": True},
    "endpoint": {
        "concurrency": 8,
        "max_attempts": 5,
        "timeout": 120.0,
        "backoff_base": 0.25,
        "backoff_cap": 8.0,
    },
    "decoding": {"max_tokens": 512, "temperature": 0.0, "mode": "pretrained"},
    "analysis": {
        "delta_metric": "comet",
        "hallucination_hi": 30.0,
        "hallucination_lo": 3.0,
        "top_k": 20,
        "bin_width": 1.0,
    },
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argument errors and unknown subcommands are validation failures (exit 1)
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_schema() -> dict:
    with resources.files("mtpipe").joinpath("config_schema.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def load_config(path: str | Path | None) -> dict:
    """Load and schema-validate the JSON config file (empty dict if None)."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(_load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for error in errors:
            pointer = "/" + "/".join(str(p) for p in error.absolute_path)
            lines.append(f"  {pointer}: {error.message}")
        raise ConfigError("config schema violations:\n" + "\n".join(lines))
    return raw


def _merge(config: dict, section: str) -> dict:
    merged = dict(_DEFAULTS.get(section, {}))
    merged.update(config.get(section, {}))
    return merged


def _require(value: Any, what: str) -> Any:
    if value is None:
        raise ConfigError(f"missing required setting: {what}")
    return value


def _require_path(value: Any, what: str) -> Path:
    path = Path(_require(value, what))
    if not path.exists():
        raise ConfigError(f"{what}: path does not exist: {path}")
    return path


def _seed(args: argparse.Namespace, config: dict) -> int:
    seed = args.seed if getattr(args, "seed", None) is not None else config.get("seed")
    return int(_require(seed, "seed (config `seed` or --seed)"))


def _effective_config(config: dict, args: argparse.Namespace, overrides: dict) -> dict:
    """Fully resolved settings for hashing into the run record."""
    effective = {section: _merge(config, section) for section in _DEFAULTS}
    if "seed" in config or getattr(args, "seed", None) is not None:
        effective["seed"] = (
            args.seed if getattr(args, "seed", None) is not None else config["seed"]
        )
    effective["paths"] = dict(config.get("paths", {}))
    effective.update(overrides)
    return effective


def _write_run_record(
    out: Path, subcommand: str, effective: dict, row_counts: dict, seed: int | None
) -> None:
    record = {
        "subcommand": subcommand,
        "config_hash": config_hash(effective),
        "seed": seed,
        "versions": {
            "mtpipe": mtpipe.__version__,
            "schema": SCHEMA_VERSION,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "metric_signatures": metrics.metric_signatures(),
        "row_counts": row_counts,
    }
    target = out / "runrecord.json" if out.is_dir() else out.with_suffix(out.suffix + ".runrecord.json")
    with atomic_write(target) as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _filter_config(config: dict, seed: int) -> tuple[FilterConfig, int]:
    section = _merge(config, "filter")
    return (
        FilterConfig(
            seed=seed,
            bicleaner_min=section["bicleaner_min"],
            kiwi_min=section["kiwi_min"],
            per_pair_cap=section["per_pair_cap"],
        ),
        section["example_pool_size"],
    )


def _policy(config: dict) -> MixturePolicy:
    section = _merge(config, "policy")
    return MixturePolicy(
        variant=MixtureVariant(section["variant"]), max_shots=section["max_shots"]
    )


def _endpoint(config: dict, url_flag: str | None) -> EndpointConfig:
    section = _merge(config, "endpoint")
    url = url_flag or section.get("url")
    return EndpointConfig(
        url=_require(url, "endpoint.url (config or --endpoint)"),
        model=section.get("model"),
        auth_env=section.get("auth_env"),
        concurrency=section["concurrency"],
        max_attempts=section["max_attempts"],
        timeout=section["timeout"],
        backoff_base=section["backoff_base"],
        backoff_cap=section["backoff_cap"],
    )


def _decoding(config: dict, mode_flag: str | None) -> DecodingConfig:
    section = _merge(config, "decoding")
    return DecodingConfig(
        max_tokens=section["max_tokens"],
        temperature=section["temperature"],
        mode=mode_flag or section["mode"],
    )


def cmd_filter(args: argparse.Namespace, config: dict) -> int:
    seed = _seed(args, config)
    corpus_in = _require_path(
        args.corpus or config.get("paths", {}).get("corpus_in"), "corpus input"
    )
    pools_out = Path(
        _require(args.out or config.get("paths", {}).get("pools_out"), "pools output dir")
    )
    filter_config, example_pool_size = _filter_config(config, seed)
    pools, stats = filter_and_sample(
        read_segments(corpus_in), filter_config, example_pool_size=example_pool_size
    )
    counts = write_pool_files(pools, pools_out)
    counts.update({f"stat:{k}": v for k, v in stats["dropped"].items()})
    counts["stat:input_rows"] = stats["input_rows"]
    effective = _effective_config(config, args, {"corpus_in": str(corpus_in)})
    _write_run_record(pools_out, "filter", effective, counts, seed)
    print(f"filter: {stats['input_rows']} rows in, pools written to {pools_out}")
    return 0


def cmd_build_train(args: argparse.Namespace, config: dict) -> int:
    seed = _seed(args, config)
    pools_dir = _require_path(
        args.pools or config.get("paths", {}).get("pools_out"), "pools dir"
    )
    out_path = Path(
        _require(args.out or config.get("paths", {}).get("dataset_out"), "dataset output")
    )
    section = _merge(config, "dataset")
    n_records = args.n_records if args.n_records is not None else section.get("n_records")
    template = TemplateId(section.get("template", DEFAULT_FEW_SHOT.value))
    pools = read_pool_files(pools_dir)
    n = build_training_set(
        pools,
        _policy(config),
        out_path,
        seed=seed,
        n_records=n_records,
        template=template,
        names=section.get("language_names"),
    )
    effective = _effective_config(config, args, {"n_records": n, "pools": str(pools_dir)})
    _write_run_record(out_path, "build-train", effective, {"records": n}, seed)
    print(f"build-train: {n} records -> {out_path}")
    return 0


def cmd_build_eval(args: argparse.Namespace, config: dict) -> int:
    seed = _seed(args, config)
    test_in = _require_path(
        args.test or config.get("paths", {}).get("test_in"), "test segments input"
    )
    pools_dir = _require_path(
        args.pools or config.get("paths", {}).get("pools_out"), "pools dir"
    )
    out_path = Path(
        _require(args.out or config.get("paths", {}).get("eval_out"), "eval output")
    )
    section = _merge(config, "eval")
    dataset_section = _merge(config, "dataset")
    pools = read_pool_files(pools_dir)
    dev_pools = {code: pool.examples for code, pool in pools.pools.items()}
    n = build_eval_set(
        list(read_segments(test_in)),
        dev_pools,
        out_path,
        seed=seed,
        shot_settings=section["shots"],
        template=TemplateId(dataset_section.get("template", DEFAULT_FEW_SHOT.value)),
        names=dataset_section.get("language_names"),
        include_reference=False if args.blind else section["include_reference"],
    )
    effective = _effective_config(config, args, {"test_in": str(test_in)})
    _write_run_record(out_path, "build-eval", effective, {"records": n}, seed)
    print(f"build-eval: {n} records -> {out_path}")
    return 0


def cmd_generate(args: argparse.Namespace, config: dict) -> int:
    eval_in = _require_path(
        args.eval or config.get("paths", {}).get("eval_out"), "eval records input"
    )
    out_path = Path(
        _require(args.out or config.get("paths", {}).get("results_out"), "results output")
    )
    endpoint = _endpoint(config, args.endpoint)
    decoding = _decoding(config, args.mode)
    stats = run_batch_from_file(eval_in, endpoint, decoding, out_path, resume=args.resume)
    effective = _effective_config(config, args, {"eval_in": str(eval_in)})
    _write_run_record(
        out_path,
        "generate",
        effective,
        {
            "rows": stats.total,
            "succeeded": stats.succeeded,
            "errors": stats.errors,
            "reused": stats.reused,
        },
        None,
    )
    print(
        f"generate: {stats.total} rows ({stats.succeeded} ok, {stats.errors} errors, "
        f"{stats.reused} reused) -> {out_path}"
    )
    return 0


def _scoring_id(segment_id: str, shots: int) -> str:
    return f"{segment_id}#{shots}"


def cmd_score(args: argparse.Namespace, config: dict) -> int:
    eval_in = _require_path(
        args.eval or config.get("paths", {}).get("eval_out"), "eval records input"
    )
    results_in = _require_path(
        args.results or config.get("paths", {}).get("results_out"), "generation results"
    )
    out_path = Path(
        _require(
            args.out or config.get("paths", {}).get("evaluations_out"), "evaluations output"
        )
    )
    records = list(read_records(eval_in))
    results = list(read_results(results_in))
    if len(records) != len(results):
        raise ConfigError(
            f"eval records ({len(records)}) and results ({len(results)}) row counts differ"
        )
    scores_path = args.scores or config.get("paths", {}).get("scores_in")
    model_scores = ingest_scores(scores_path) if scores_path else {}
    # instruction records carry no domain tag; re-join it from the segments
    # file when given, else fall back to the per-run --domain label
    domains: dict[str, str] = {}
    if args.segments:
        domains = {
            seg.id: seg.domain_tag
            for seg in read_segments(_require_path(args.segments, "segments file"))
        }

    if args.emit_triples:
        rows = []
        for record, result in zip(records, results):
            if result.error is not None:
                continue
            rows.append(
                {
                    "segment_id": _scoring_id(record.segment_id, record.n_shots),
                    "src": parse_prompt(record.prompt).source,
                    "hyp": result.translation,
                    "ref": record.completion,
                }
            )
        with atomic_write(args.emit_triples) as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        print(f"score: wrote {len(rows)} scoring triples -> {args.emit_triples}")

    evaluations: list[SegmentEvaluation] = []
    info: dict[str, analysis.SegmentInfo] = {}
    skipped = 0
    for record, result in zip(records, results):
        if result.error is not None:
            skipped += 1
            continue
        comet, kiwi = model_scores.get(
            _scoring_id(record.segment_id, record.n_shots), (None, None)
        )
        evaluations.append(
            SegmentEvaluation(
                segment_id=record.segment_id,
                system=args.system,
                shots=record.n_shots,
                bleu_sent=metrics.sentence_bleu(result.translation, record.completion),
                chrf_sent=metrics.sentence_chrf(result.translation, record.completion),
                comet=comet,
                kiwi=kiwi,
            )
        )
        info.setdefault(
            record.segment_id,
            analysis.SegmentInfo(
                pair=record.pair.code,
                domain=domains.get(record.segment_id, args.domain),
                src_text=parse_prompt(record.prompt).source,
                ref_text=record.completion,
            ),
        )
    n = analysis.write_evaluations_csv(out_path, evaluations, info)
    effective = _effective_config(
        config, args, {"system": args.system, "results": str(results_in)}
    )
    _write_run_record(
        out_path, "score", effective, {"evaluations": n, "skipped_error_rows": skipped}, None
    )
    print(f"score: {n} evaluations ({skipped} error rows skipped) -> {out_path}")
    return 0


def cmd_analyze(args: argparse.Namespace, config: dict) -> int:
    evaluations_in = _require_path(
        args.evaluations or config.get("paths", {}).get("evaluations_out"),
        "evaluations input",
    )
    reports_out = Path(
        _require(args.out or config.get("paths", {}).get("reports_out"), "reports dir")
    )
    reports_out.mkdir(parents=True, exist_ok=True)
    section = _merge(config, "analysis")
    evaluations, info = analysis.read_evaluations_csv(evaluations_in)

    run_all = not (args.deltas or args.hallucination or args.lengths or args.aggregate)
    row_counts: dict[str, int] = {}
    systems = sorted({ev.system for ev in evaluations})

    def split(system: str, shots: int) -> list[SegmentEvaluation]:
        return [ev for ev in evaluations if ev.system == system and ev.shots == shots]

    if args.deltas or run_all:
        metric = args.delta_metric or section["delta_metric"]
        for system in systems:
            zero, few = split(system, 0), [ev for ev in evaluations if ev.system == system and ev.shots > 0]
            if not zero or not few:
                continue
            try:
                records = analysis.compute_deltas(zero, few, metric=metric, info=info)
            except analysis.AnalysisError:
                if args.deltas:
                    raise
                # nothing ingested for the default metric; skip quietly in run-all mode
                print(f"analyze: skipping deltas for {system} ({metric} scores absent)")
                continue
            out_dir = reports_out / system
            counts = analysis.write_delta_outputs(
                records,
                out_dir,
                metric,
                info=info,
                top_k=section["top_k"],
                bin_width=section["bin_width"],
            )
            row_counts.update({f"{system}/{k}": v for k, v in counts.items()})

    if args.hallucination or run_all:
        reports = {}
        for system in systems:
            zero, few = split(system, 0), [ev for ev in evaluations if ev.system == system and ev.shots > 0]
            if not zero or not few:
                continue
            reports[system] = analysis.hallucination_rate(
                {ev.segment_id: ev.bleu_sent for ev in zero},
                {ev.segment_id: ev.bleu_sent for ev in few},
                hi=section["hallucination_hi"],
                lo=section["hallucination_lo"],
                info=info,
            )
        if reports:
            row_counts["hallucination.csv"] = analysis.write_hallucination_csv(
                reports_out / "hallucination.csv", reports
            )

    if (args.lengths or run_all) and args.results:
        results_by_system = {}
        for spec in args.results:
            name, sep, path = spec.partition("=")
            if not sep:
                raise ConfigError(f"--results expects name=path, got {spec!r}")
            results_by_system[name] = list(read_results(_require_path(path, "results file")))
        reference_lengths = [
            len(whitespace_tokens(meta.ref_text)) for meta in info.values() if meta.ref_text
        ]
        report = analysis.length_distribution(results_by_system, reference_lengths)
        row_counts.update(analysis.write_length_csvs(report, reports_out))

    if args.aggregate or run_all:
        aggregate = analysis.aggregate_report(evaluations, info)
        row_counts.update(analysis.write_aggregate_csvs(aggregate, reports_out))

    effective = _effective_config(config, args, {"evaluations": str(evaluations_in)})
    _write_run_record(reports_out, "analyze", effective, row_counts, None)
    print(f"analyze: reports -> {reports_out} ({', '.join(sorted(row_counts)) or 'nothing'})")
    return 0


def cmd_manifest(args: argparse.Namespace, config: dict) -> int:
    out_path = Path(args.out)
    overrides: dict[str, object] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = json.loads(value)
    manifest = emit_manifest(args.method, out_path, **overrides)
    effective = _effective_config(config, args, {"method": args.method, **overrides})
    _write_run_record(out_path, "manifest", effective, {"fields": len(manifest)}, None)
    print(f"manifest: {args.method} -> {out_path}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="mtpipe", description=__doc__.split("\n\n")[0])
    parser.add_argument(
        "--version",
        action="store_true",
        help="print version, metric signatures, and schema version",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    def add(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides config seed")
        return p

    p = add("filter", cmd_filter, "filter a corpus and sample per-pair pools")
    p.add_argument("--corpus", help="input segments (TSV or JSONL)")
    p.add_argument("--out", help="output pools directory")

    p = add("build-train", cmd_build_train, "emit a training instruction dataset")
    p.add_argument("--pools", help="pools directory from `filter`")
    p.add_argument("--out", help="output JSONL path")
    p.add_argument("--n-records", type=int, dest="n_records")

    p = add("build-eval", cmd_build_eval, "emit zero/few-shot evaluation prompts")
    p.add_argument("--test", help="test segments file")
    p.add_argument("--pools", help="pools directory (example pools serve as dev pools)")
    p.add_argument("--out", help="output JSONL path")
    p.add_argument("--blind", action="store_true", help="strip references from completions")

    p = add("generate", cmd_generate, "run prompts against a completions endpoint")
    p.add_argument("--eval", help="eval records JSONL")
    p.add_argument("--out", help="results JSONL path")
    p.add_argument("--endpoint", help="completions endpoint URL")
    p.add_argument("--mode", choices=["pretrained", "finetuned"])
    p.add_argument("--resume", action="store_true", help="complete missing/errored rows")

    p = add("score", cmd_score, "score generation results against references")
    p.add_argument("--eval", help="eval records JSONL (references)")
    p.add_argument("--results", help="generation results JSONL")
    p.add_argument("--system", default="system", help="system name for report rows")
    p.add_argument("--domain", default="", help="domain tag for report rows")
    p.add_argument("--segments", help="segments file to re-join per-segment domain tags")
    p.add_argument("--scores", help="neural-score TSV (segment_id, comet, kiwi)")
    p.add_argument("--emit-triples", help="write scoring triples JSONL for external scorers")
    p.add_argument("--out", help="evaluations CSV path")

    p = add("analyze", cmd_analyze, "produce delta/hallucination/length/aggregate reports")
    p.add_argument("--evaluations", help="evaluations CSV (may concatenate systems)")
    p.add_argument("--out", help="reports directory")
    p.add_argument("--deltas", action="store_true")
    p.add_argument("--delta-metric", choices=["bleu", "chrf", "comet", "kiwi"])
    p.add_argument("--hallucination", action="store_true")
    p.add_argument("--lengths", action="store_true")
    p.add_argument("--aggregate", action="store_true")
    p.add_argument(
        "--results",
        action="append",
        metavar="NAME=PATH",
        help="per-system results JSONL for length analysis (repeatable)",
    )

    p = add("manifest", cmd_manifest, "emit a training hyperparameter manifest")
    p.add_argument("--method", required=True, choices=["lora", "full_ft"])
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a field")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(f"mtpipe {mtpipe.__version__} (config schema v{SCHEMA_VERSION})")
        for name, signature in metrics.metric_signatures().items():
            print(f"  {name}: {signature}")
        return 0
    if not getattr(args, "subcommand", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        config = load_config(args.config)
        return args.handler(args, config)
    except (ConfigError, CorpusError, DatasetError, MetricError, IngestError) as exc:
        print(f"mtpipe {args.subcommand}: {exc}", file=sys.stderr)
        return 1
    except EndpointUnreachable as exc:
        print(f"mtpipe {args.subcommand}: {exc} (partial results preserved)", file=sys.stderr)
        return 2
    except (GenerationError, OSError, ValueError) as exc:
        print(f"mtpipe {args.subcommand}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
