"""Client for a remote text-generation HTTP endpoint.

The endpoint contract: POST a JSON object {"prompt", "max_new_tokens",
"temperature", "stop"} and receive {"text": "..."} back. The client runs a
bounded worker pool, retries transient failures with exponential backoff,
and appends each completed row to the output file as it lands so an
interrupted run can resume without re-requesting finished samples.

Completed output files are canonical: rows sorted by sample_id, stable JSON
encoding. Re-running against a complete file performs no requests and leaves
the bytes untouched.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import requests as _http

from .jsonl import dump_row, iter_jsonl

DEFAULT_STOP: tuple[str, ...] = ("### Response:",)


@dataclass(frozen=True)
class GenerationRequest:
    sample_id: str
    prompt: str
    max_new_tokens: int = 512
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = DEFAULT_STOP


@dataclass
class GenerationResult:
    sample_id: str
    text: str
    latency_ms: float = 0.0
    attempt: int = 0  # 0 marks a row loaded from a previous run


@dataclass(frozen=True)
class ClientPolicy:
    max_parallel: int = 4
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    backoff_multiplier: float = 2.0
    timeout_seconds: float = 60.0

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")


class EndpointError(RuntimeError):
    """Raised when any request fails after all attempts; successes are kept."""

    def __init__(self, failures: list[tuple[str, str]], results: list[GenerationResult]):
        preview = ", ".join(sample_id for sample_id, _ in failures[:3])
        suffix = ", ..." if len(failures) > 3 else ""
        super().__init__(f"{len(failures)} request(s) failed ({preview}{suffix})")
        self.failures = failures
        self.results = results


class _Transient(Exception):
    pass


class _Fatal(Exception):
    pass


def _call_once(
    endpoint: str,
    request: GenerationRequest,
    timeout: float,
    headers: dict[str, str],
) -> str:
    payload = {
        "prompt": request.prompt,
        "max_new_tokens": request.max_new_tokens,
        "temperature": request.temperature,
        "stop": list(request.stop_sequences),
    }
    try:
        response = _http.post(endpoint, json=payload, timeout=timeout, headers=headers)
    except _http.RequestException as exc:
        raise _Transient(f"connection failed: {exc}") from exc
    if response.status_code >= 500:
        raise _Transient(f"server error {response.status_code}")
    if response.status_code >= 400:
        raise _Fatal(f"client error {response.status_code}: {response.text[:200]}")
    try:
        body = response.json()
    except ValueError as exc:
        raise _Transient(f"invalid json body: {exc}") from exc
    if not isinstance(body, dict) or not isinstance(body.get("text"), str):
        raise _Transient("response body missing 'text'")
    return body["text"]


def _call_with_retries(
    endpoint: str,
    request: GenerationRequest,
    policy: ClientPolicy,
    headers: dict[str, str],
) -> GenerationResult:
    delay = policy.backoff_seconds
    last_reason = "unknown"
    for attempt in range(1, policy.max_attempts + 1):
        started = time.monotonic()
        try:
            text = _call_once(endpoint, request, policy.timeout_seconds, headers)
        except _Transient as exc:
            last_reason = str(exc)
            if attempt < policy.max_attempts and delay > 0:
                time.sleep(delay)
                delay *= policy.backoff_multiplier
            continue
        latency_ms = (time.monotonic() - started) * 1000.0
        return GenerationResult(request.sample_id, text, latency_ms, attempt)
    raise _Transient(last_reason)


def _load_existing(path: Path) -> dict[str, str]:
    if not path.exists():
        return {}
    texts: dict[str, str] = {}
    for lineno, line in iter_jsonl(path):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        if not isinstance(row, dict) or "sample_id" not in row or "text" not in row:
            raise ValueError(f"{path}: line {lineno}: not a generation row")
        texts.setdefault(row["sample_id"], row["text"])
    return texts


def _write_canonical(path: Path, texts: dict[str, str]) -> None:
    canonical = "".join(
        dump_row({"sample_id": sid, "text": texts[sid]}) + "\n" for sid in sorted(texts)
    )
    if path.exists() and path.read_text(encoding="utf-8") == canonical:
        return
    path.write_text(canonical, encoding="utf-8")


def generate_batch(
    batch: list[GenerationRequest],
    endpoint: str,
    policy: ClientPolicy | None = None,
    out_path: str | Path | None = None,
    auth_token: str | None = None,
) -> list[GenerationResult]:
    """Run the batch against `endpoint`, returning results sorted by sample_id.

    With out_path set, rows already present in the file are returned without
    any request and new rows are appended as they complete, so killing and
    re-running converges. If any request exhausts its attempts the completed
    rows are still persisted and EndpointError carries the failures.
    """
    policy = policy or ClientPolicy()
    seen_ids: set[str] = set()
    for request in batch:
        if request.sample_id in seen_ids:
            raise ValueError(f"duplicate sample_id in batch: {request.sample_id}")
        seen_ids.add(request.sample_id)

    headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
    out_file = Path(out_path) if out_path is not None else None
    existing = _load_existing(out_file) if out_file is not None else {}

    results: list[GenerationResult] = [
        GenerationResult(request.sample_id, existing[request.sample_id])
        for request in batch
        if request.sample_id in existing
    ]
    pending = [request for request in batch if request.sample_id not in existing]

    failures: list[tuple[str, str]] = []
    if pending:
        append_handle = open(out_file, "a", encoding="utf-8") if out_file is not None else None
        try:
            with ThreadPoolExecutor(max_workers=policy.max_parallel) as pool:
                futures = {
                    pool.submit(_call_with_retries, endpoint, request, policy, headers): request
                    for request in pending
                }
                for future in as_completed(futures):
                    request = futures[future]
                    try:
                        result = future.result()
                    except _Transient as exc:
                        failures.append((request.sample_id, str(exc)))
                        continue
                    except _Fatal as exc:
                        failures.append((request.sample_id, str(exc)))
                        continue
                    results.append(result)
                    if append_handle is not None:
                        append_handle.write(
                            dump_row({"sample_id": result.sample_id, "text": result.text}) + "\n"
                        )
                        append_handle.flush()
        finally:
            if append_handle is not None:
                append_handle.close()

    results.sort(key=lambda r: r.sample_id)
    if failures:
        failures.sort(key=lambda f: f[0])
        raise EndpointError(failures, results)
    if out_file is not None:
        merged = dict(existing)
        merged.update({r.sample_id: r.text for r in results})
        _write_canonical(out_file, merged)
    return results
