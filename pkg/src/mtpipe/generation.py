"""Batch driving of a text-completion endpoint, with post-processing.

Requests go to an OpenAI-style completions endpoint (JSON body with prompt,
max_tokens, temperature, stop). Decoding defaults to greedy. Pretrained-model
runs pass a newline stop sequence and outputs are truncated at the first
newline; finetuned-model runs rely on the endpoint's EOS, and any newline
that still shows up is truncated but flagged so overgeneration stays
measurable.

Failed requests are retried with exponential backoff; rows that exhaust their
retries become explicit error rows, never silent gaps. A batch interrupted by
an unreachable endpoint leaves its completed rows plus a resume marker, and a
resume run completes only the missing or errored rows.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import httpx

from mtpipe.util import atomic_write, read_jsonl

FINISH_EOS = "eos"
FINISH_NEWLINE = "newline_truncated"
FINISH_LENGTH = "length_capped"

MODE_PRETRAINED = "pretrained"
MODE_FINETUNED = "finetuned"

ERROR_MAX_RETRIES = "max_retries_exceeded"


class GenerationError(RuntimeError):
    pass


class EndpointUnreachable(GenerationError):
    """Connection-level failure that persisted across retries; batch aborted."""


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


def postprocess(
    raw: str, mode: str = MODE_PRETRAINED, stop_reason: str = "stop"
) -> tuple[str, str]:
    """Strip leading whitespace, truncate at the first newline.

    Returns (translation, finish). `finish` is `newline_truncated` when a
    newline was cut (in either mode: for pretrained runs that is routine
    overgeneration handling, for finetuned runs it is the signal that the
    model still overgenerates); otherwise it reflects the endpoint stop
    reason ("length" -> length_capped, anything else -> eos).
    """
    if mode not in (MODE_PRETRAINED, MODE_FINETUNED):
        raise GenerationError(f"unknown postprocess mode {mode!r}")
    text = raw.lstrip()
    newline = text.find("\n")
    if newline != -1:
        return text[:newline], FINISH_NEWLINE
    if stop_reason == "length":
        return text, FINISH_LENGTH
    return text, FINISH_EOS


@dataclass(frozen=True)
class GenerationResult:
    """One completed (or failed) generation request."""

    row: int
    segment_id: str
    raw_output: str
    translation: str
    finish: str
    raw_token_count: int
    translation_token_count: int
    error: str | None = None

    def to_dict(self) -> dict:
        out = {
            "row": self.row,
            "segment_id": self.segment_id,
            "raw_output": self.raw_output,
            "translation": self.translation,
            "finish": self.finish,
            "raw_token_count": self.raw_token_count,
            "translation_token_count": self.translation_token_count,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_dict(cls, row: dict) -> "GenerationResult":
        return cls(
            row=row["row"],
            segment_id=row["segment_id"],
            raw_output=row["raw_output"],
            translation=row["translation"],
            finish=row["finish"],
            raw_token_count=row["raw_token_count"],
            translation_token_count=row["translation_token_count"],
            error=row.get("error"),
        )


def result_from_output(
    row: int,
    segment_id: str,
    raw: str,
    mode: str,
    stop_reason: str = "stop",
    tokenizer: Callable[[str], list[str]] | None = None,
) -> GenerationResult:
    tokens = tokenizer or whitespace_tokens
    translation, finish = postprocess(raw, mode, stop_reason)
    return GenerationResult(
        row=row,
        segment_id=segment_id,
        raw_output=raw,
        translation=translation,
        finish=finish,
        raw_token_count=len(tokens(raw)),
        translation_token_count=len(tokens(translation)),
    )


@dataclass
class EndpointConfig:
    url: str
    model: str | None = None
    auth_env: str | None = None
    concurrency: int = 8
    max_attempts: int = 5
    backoff_base: float = 0.25
    backoff_cap: float = 8.0
    timeout: float = 120.0

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers


@dataclass
class DecodingConfig:
    max_tokens: int = 512
    temperature: float = 0.0
    mode: str = MODE_PRETRAINED

    def stop_sequences(self) -> list[str] | None:
        return ["\n"] if self.mode == MODE_PRETRAINED else None


class _PermanentHTTPError(GenerationError):
    def __init__(self, status: int) -> None:
        super().__init__(f"http_status{status}")
        self.status = status


@dataclass
class BatchStats:
    total: int = 0
    succeeded: int = 0
    errors: int = 0
    reused: int = 0
    retried_requests: int = 0
    error_rows: list[int] = field(default_factory=list)


def _request_completion(
    client: httpx.Client,
    endpoint: EndpointConfig,
    decoding: DecodingConfig,
    prompt: str,
    stats: BatchStats,
    stats_lock: threading.Lock,
) -> tuple[str, str]:
    """Single request with retries. Returns (text, finish_reason)."""
    body: dict = {
        "prompt": prompt,
        "max_tokens": decoding.max_tokens,
        "temperature": decoding.temperature,
    }
    stop = decoding.stop_sequences()
    if stop:
        body["stop"] = stop
    if endpoint.model:
        body["model"] = endpoint.model

    last_error: Exception | None = None
    for attempt in range(endpoint.max_attempts):
        if attempt:
            delay = min(endpoint.backoff_base * (2 ** (attempt - 1)), endpoint.backoff_cap)
            time.sleep(delay)
            with stats_lock:
                stats.retried_requests += 1
        try:
            response = client.post(
                endpoint.url, json=body, headers=endpoint.headers(), timeout=endpoint.timeout
            )
        except httpx.TransportError as exc:
            last_error = EndpointUnreachable(f"endpoint_unreachable: {exc}")
            continue
        if response.status_code == 429 or response.status_code >= 500:
            last_error = GenerationError(
                "rate_limited" if response.status_code == 429 else f"http_status{response.status_code}"
            )
            continue
        if response.status_code >= 400:
            raise _PermanentHTTPError(response.status_code)
        data = response.json()
        choice = data["choices"][0]
        return choice.get("text", ""), choice.get("finish_reason", "stop")

    assert last_error is not None
    if isinstance(last_error, EndpointUnreachable):
        raise last_error
    raise GenerationError(ERROR_MAX_RETRIES)


def _load_existing(out_path: Path) -> dict[int, GenerationResult]:
    """Reusable (non-error) rows from a final or partial output file."""
    rows: dict[int, GenerationResult] = {}
    for candidate in (out_path, out_path.with_suffix(out_path.suffix + ".partial")):
        if candidate.exists():
            for row in read_jsonl(candidate):
                result = GenerationResult.from_dict(row)
                if result.error is None:
                    rows[result.row] = result
            break
    return rows


def run_batch(
    records: Sequence[Mapping],
    endpoint: EndpointConfig,
    decoding: DecodingConfig,
    out_path: str | Path,
    resume: bool = False,
    tokenizer: Callable[[str], list[str]] | None = None,
) -> BatchStats:
    """Drive the endpoint over `records`, writing one result row per input row.

    `records` need `prompt` and `segment_id` fields. Output rows are emitted
    in input order regardless of completion order. With `resume=True`,
    successful rows from a previous final or partial file are reused and only
    missing or errored rows are requested again.
    """
    out_path = Path(out_path)
    partial_path = out_path.with_suffix(out_path.suffix + ".partial")
    marker_path = out_path.with_suffix(out_path.suffix + ".resume")

    stats = BatchStats(total=len(records))
    results: dict[int, GenerationResult] = _load_existing(out_path) if resume else {}
    # drop stale rows beyond the current input
    results = {row: res for row, res in results.items() if row < len(records)}
    stats.reused = len(results)

    pending = [i for i in range(len(records)) if i not in results]
    stats_lock = threading.Lock()
    write_lock = threading.Lock()
    partial_fh = open(partial_path, "a", encoding="utf-8")

    def record_result(result: GenerationResult) -> None:
        with write_lock:
            results[result.row] = result
            partial_fh.write(json.dumps(result.to_dict(), ensure_ascii=False))
            partial_fh.write("\n")
            partial_fh.flush()

    def work(index: int) -> None:
        record = records[index]
        prompt = record["prompt"]
        segment_id = record["segment_id"]
        try:
            text, finish_reason = _request_completion(
                client, endpoint, decoding, prompt, stats, stats_lock
            )
        except EndpointUnreachable:
            raise
        except GenerationError as exc:
            record_result(
                GenerationResult(
                    row=index,
                    segment_id=segment_id,
                    raw_output="",
                    translation="",
                    finish=FINISH_EOS,
                    raw_token_count=0,
                    translation_token_count=0,
                    error=str(exc),
                )
            )
            return
        record_result(
            result_from_output(index, segment_id, text, decoding.mode, finish_reason, tokenizer)
        )

    aborted: EndpointUnreachable | None = None
    try:
        with httpx.Client() as client:
            with ThreadPoolExecutor(max_workers=max(1, endpoint.concurrency)) as pool:
                futures = [pool.submit(work, i) for i in pending]
                done, not_done = wait(futures, return_when=FIRST_EXCEPTION)
                for future in not_done:
                    future.cancel()
                for future in done:
                    exc = future.exception()
                    if isinstance(exc, EndpointUnreachable):
                        aborted = exc
                    elif exc is not None:
                        raise exc
    finally:
        partial_fh.close()

    if aborted is not None:
        with atomic_write(marker_path) as fh:
            json.dump(
                {
                    "output": out_path.name,
                    "input_rows": len(records),
                    "completed_rows": len(results),
                },
                fh,
            )
            fh.write("\n")
        raise aborted

    ordered = [results[i] for i in range(len(records))]
    with atomic_write(out_path) as fh:
        for result in ordered:
            fh.write(json.dumps(result.to_dict(), ensure_ascii=False))
            fh.write("\n")
    partial_path.unlink(missing_ok=True)
    marker_path.unlink(missing_ok=True)

    stats.succeeded = sum(1 for r in ordered if r.error is None)
    stats.errors = stats.total - stats.succeeded
    stats.error_rows = [r.row for r in ordered if r.error is not None]
    return stats


def run_batch_from_file(
    in_path: str | Path,
    endpoint: EndpointConfig,
    decoding: DecodingConfig,
    out_path: str | Path,
    resume: bool = False,
) -> BatchStats:
    records = list(read_jsonl(in_path))
    return run_batch(records, endpoint, decoding, out_path, resume=resume)


def read_results(path: str | Path) -> Iterator[GenerationResult]:
    for row in read_jsonl(path):
        yield GenerationResult.from_dict(row)


def successful_results(results: Iterable[GenerationResult]) -> list[GenerationResult]:
    return [r for r in results if r.error is None]
