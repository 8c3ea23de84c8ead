"""A mock OpenAI-style completions endpoint for tests and offline pipeline runs.

The server answers POSTs with a deterministic "translation" of the last
`Source:` line in the prompt, looked up in a translation table or echoed
back. It can simulate an overgenerating pretrained model (appending a prompt
echo after a newline) and inject failures (429 bursts, permanent 500s) for
exercising the client's retry and resume behavior.

Run standalone:

    python -m mtpipe.mockserver --port 8399 [--corpus pools/de-en.train.jsonl]
"""

from __future__ import annotations

import argparse
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


@dataclass
class _FailRule:
    match: str
    status: int
    times: int | None  # None = always


class MockCompletionServer:
    """In-process completions endpoint with programmable failures."""

    def __init__(
        self,
        translations: dict[str, str] | None = None,
        overgenerate: bool = False,
        honor_stop: bool = False,
        port: int = 0,
    ) -> None:
        self.translations = translations or {}
        self.overgenerate = overgenerate
        self.honor_stop = honor_stop
        self._port = port
        self._rules: list[_FailRule] = []
        self._lock = threading.Lock()
        self.request_count = 0
        self.last_authorization: str | None = None
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def fail(self, match: str, status: int, times: int | None = 1) -> None:
        """Respond with `status` to the next `times` prompts containing `match`."""
        with self._lock:
            self._rules.append(_FailRule(match, status, times))

    def clear_failures(self) -> None:
        with self._lock:
            self._rules.clear()

    def _check_rules(self, prompt: str) -> int | None:
        with self._lock:
            for rule in self._rules:
                if rule.match in prompt and (rule.times is None or rule.times > 0):
                    if rule.times is not None:
                        rule.times -= 1
                    return rule.status
        return None

    def _source_of(self, prompt: str) -> str:
        source = ""
        for line in prompt.split("\n"):
            if line.startswith("Source: "):
                source = line[len("Source: ") :]
        return source

    def completion_for(self, prompt: str, stop: list[str] | None) -> str:
        source = self._source_of(prompt)
        translation = self.translations.get(source, source)
        text = " " + translation
        if self.overgenerate:
            instruction = prompt.rsplit("\n", 2)[0].split("\n")[-1] if "\n" in prompt else ""
            text += f"\n\n{instruction}\nSource: {source}\nTarget: {translation}"
        if self.honor_stop and stop:
            for sequence in stop:
                cut = text.find(sequence)
                if cut != -1:
                    text = text[:cut]
        return text

    def handle(self, body: dict) -> tuple[int, dict]:
        prompt = body.get("prompt", "")
        with self._lock:
            self.request_count += 1
        status = self._check_rules(prompt)
        if status is not None:
            return status, {"error": {"code": status, "message": "injected failure"}}
        text = self.completion_for(prompt, body.get("stop"))
        max_tokens = body.get("max_tokens")
        finish = "stop"
        if max_tokens is not None:
            tokens = text.split(" ")
            if len(tokens) > max_tokens:
                text = " ".join(tokens[:max_tokens])
                finish = "length"
        return 200, {
            "id": "mock-completion",
            "object": "text_completion",
            "choices": [{"index": 0, "text": text, "finish_reason": finish}],
        }

    def start(self) -> "MockCompletionServer":
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                server.last_authorization = self.headers.get("Authorization")
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    body = {}
                status, payload = server.handle(body)
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args: object) -> None:
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", self._port), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    @property
    def url(self) -> str:
        assert self._httpd is not None, "server not started"
        return f"http://127.0.0.1:{self._httpd.server_address[1]}/v1/completions"

    def __enter__(self) -> "MockCompletionServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


def _translations_from_corpus(path: Path) -> dict[str, str]:
    from mtpipe.corpus import read_segments

    return {seg.src_text: seg.tgt_text for seg in read_segments(path)}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Run a mock completions endpoint.")
    parser.add_argument("--port", type=int, default=8399)
    parser.add_argument("--corpus", type=Path, help="segments file for the translation table")
    parser.add_argument("--overgenerate", action="store_true")
    parser.add_argument("--honor-stop", action="store_true")
    args = parser.parse_args(argv)

    translations = _translations_from_corpus(args.corpus) if args.corpus else {}
    server = MockCompletionServer(
        translations=translations,
        overgenerate=args.overgenerate,
        honor_stop=args.honor_stop,
        port=args.port,
    ).start()
    print(f"mock completions endpoint at {server.url}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
