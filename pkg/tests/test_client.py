"""Generation client behavior against a scripted in-process HTTP endpoint."""

import json
import time

import pytest

from citepipe.client import (
    ClientPolicy,
    EndpointError,
    GenerationRequest,
    generate_batch,
)
from citepipe.jsonl import dump_row

FAST = ClientPolicy(max_parallel=4, max_attempts=3, backoff_seconds=0.0)


def req(sid: str) -> GenerationRequest:
    return GenerationRequest(sample_id=sid, prompt=f"prompt for {sid}")


def row_id(line: str) -> str:
    return json.loads(line)["sample_id"]


class TestHappyPath:
    def test_echo_batch(self, mock_endpoint):
        results = generate_batch([req("b"), req("a"), req("c")], mock_endpoint.url, FAST)
        assert [r.sample_id for r in results] == ["a", "b", "c"]
        assert results[0].text == "echo: prompt for a"
        assert all(r.attempt == 1 for r in results)
        assert all(r.latency_ms > 0 for r in results)

    def test_wire_payload_shape(self, mock_endpoint):
        request = GenerationRequest("a", "hello", max_new_tokens=128, temperature=0.7)
        generate_batch([request], mock_endpoint.url, FAST)
        payload = mock_endpoint.requests[0]["payload"]
        assert payload == {
            "prompt": "hello",
            "max_new_tokens": 128,
            "temperature": 0.7,
            "stop": ["### Response:"],
        }

    def test_no_auth_header_by_default(self, mock_endpoint):
        generate_batch([req("a")], mock_endpoint.url, FAST)
        assert mock_endpoint.requests[0]["auth"] is None

    def test_bearer_token_sent_when_given(self, mock_endpoint):
        generate_batch([req("a"), req("b")], mock_endpoint.url, FAST, auth_token="sekrit")
        assert {entry["auth"] for entry in mock_endpoint.requests} == {"Bearer sekrit"}

    def test_parallelism_is_bounded(self, mock_endpoint):
        mock_endpoint.delay_seconds = 0.15
        policy = ClientPolicy(max_parallel=3, backoff_seconds=0.0)
        batch = [req(f"s{i}") for i in range(8)]
        started = time.monotonic()
        generate_batch(batch, mock_endpoint.url, policy)
        elapsed = time.monotonic() - started
        assert mock_endpoint.max_active <= 3
        assert mock_endpoint.max_active >= 2
        assert elapsed < 8 * 0.15

    def test_duplicate_ids_rejected(self, mock_endpoint):
        with pytest.raises(ValueError, match="duplicate sample_id"):
            generate_batch([req("a"), req("a")], mock_endpoint.url, FAST)
        assert mock_endpoint.requests == []


class TestRetries:
    def test_transient_failures_retried_to_success(self, mock_endpoint):
        mock_endpoint.fail_remaining = 2
        results = generate_batch([req("a")], mock_endpoint.url, FAST)
        assert results[0].attempt == 3
        assert len(mock_endpoint.requests) == 3

    def test_malformed_body_retried(self, mock_endpoint):
        mock_endpoint.malformed_remaining = 1
        results = generate_batch(
            [req("a")], mock_endpoint.url, ClientPolicy(max_attempts=2, backoff_seconds=0.0)
        )
        assert results[0].attempt == 2

    def test_backoff_waits_and_grows(self, mock_endpoint):
        mock_endpoint.fail_remaining = 2
        policy = ClientPolicy(max_attempts=3, backoff_seconds=0.05, backoff_multiplier=2.0)
        started = time.monotonic()
        generate_batch([req("a")], mock_endpoint.url, policy)
        # two sleeps: 0.05 then 0.10
        assert time.monotonic() - started >= 0.14

    def test_exhausted_attempts_raise(self, mock_endpoint):
        mock_endpoint.fail_remaining = 99
        policy = ClientPolicy(max_attempts=2, backoff_seconds=0.0)
        with pytest.raises(EndpointError, match=r"2 request\(s\) failed") as err:
            generate_batch([req("b"), req("a")], mock_endpoint.url, policy)
        assert [sid for sid, _ in err.value.failures] == ["a", "b"]
        assert all("server error 503" in reason for _, reason in err.value.failures)
        assert err.value.results == []

    def test_client_errors_fail_fast(self, mock_endpoint):
        mock_endpoint.status_override = 404
        with pytest.raises(EndpointError) as err:
            generate_batch([req("a")], mock_endpoint.url, FAST)
        assert len(mock_endpoint.requests) == 1
        assert "client error 404" in err.value.failures[0][1]

    def test_unreachable_endpoint(self):
        policy = ClientPolicy(max_attempts=1, backoff_seconds=0.0, timeout_seconds=2.0)
        with pytest.raises(EndpointError) as err:
            generate_batch([req("a")], "http://127.0.0.1:9/generate", policy)
        assert "connection failed" in err.value.failures[0][1]

    def test_failure_preview_truncates(self):
        failures = [(f"s{i}", "boom") for i in range(5)]
        err = EndpointError(failures, [])
        assert "5 request(s) failed (s0, s1, s2, ...)" in str(err)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ClientPolicy(max_parallel=0)
        with pytest.raises(ValueError):
            ClientPolicy(max_attempts=0)


class TestResumableOutput:
    def test_interrupted_run_resumes_without_rerequesting(self, mock_endpoint, tmp_path):
        out = tmp_path / "gen.jsonl"
        batch = [req("s1"), req("s2"), req("s3")]
        # serial worker + one scripted failure kills exactly the first sample
        mock_endpoint.fail_remaining = 1
        policy = ClientPolicy(max_parallel=1, max_attempts=1, backoff_seconds=0.0)
        with pytest.raises(EndpointError) as err:
            generate_batch(batch, mock_endpoint.url, policy, out_path=out)
        assert [sid for sid, _ in err.value.failures] == ["s1"]
        assert len(err.value.results) == 2
        assert out.exists()

        mock_endpoint.requests.clear()
        results = generate_batch(batch, mock_endpoint.url, policy, out_path=out)
        assert mock_endpoint.prompts_seen() == ["prompt for s1"]
        assert [r.sample_id for r in results] == ["s1", "s2", "s3"]
        assert [r.attempt for r in results] == [1, 0, 0]

    def test_rerun_of_complete_file_is_quiet_and_byte_identical(self, mock_endpoint, tmp_path):
        out = tmp_path / "gen.jsonl"
        batch = [req("s2"), req("s1")]
        generate_batch(batch, mock_endpoint.url, FAST, out_path=out)
        first_bytes = out.read_bytes()
        lines = first_bytes.decode().splitlines()
        assert [row_id(line) for line in lines] == ["s1", "s2"]

        mock_endpoint.requests.clear()
        results = generate_batch(batch, mock_endpoint.url, FAST, out_path=out)
        assert mock_endpoint.requests == []
        assert all(r.attempt == 0 for r in results)
        assert out.read_bytes() == first_bytes

    def test_preseeded_rows_are_reused_not_regenerated(self, mock_endpoint, tmp_path):
        out = tmp_path / "gen.jsonl"
        out.write_text(dump_row({"sample_id": "s2", "text": "from before"}) + "\n")
        results = generate_batch(
            [req("s1"), req("s2"), req("s3")], mock_endpoint.url, FAST, out_path=out
        )
        assert sorted(mock_endpoint.prompts_seen()) == ["prompt for s1", "prompt for s3"]
        by_id = {r.sample_id: r for r in results}
        assert by_id["s2"].text == "from before"
        assert by_id["s2"].attempt == 0

    def test_foreign_rows_survive_the_canonical_rewrite(self, mock_endpoint, tmp_path):
        out = tmp_path / "gen.jsonl"
        out.write_text(dump_row({"sample_id": "zzz", "text": "unrelated"}) + "\n")
        generate_batch([req("s1")], mock_endpoint.url, FAST, out_path=out)
        lines = out.read_text().splitlines()
        assert [row_id(line) for line in lines] == ["s1", "zzz"]

    def test_corrupt_output_file_rejected(self, mock_endpoint, tmp_path):
        out = tmp_path / "gen.jsonl"
        out.write_text("{nope\n")
        with pytest.raises(ValueError, match="line 1"):
            generate_batch([req("s1")], mock_endpoint.url, FAST, out_path=out)
        out.write_text('{"sample_id": "s1"}\n')
        with pytest.raises(ValueError, match="not a generation row"):
            generate_batch([req("s1")], mock_endpoint.url, FAST, out_path=out)

    def test_no_output_path_keeps_everything_in_memory(self, mock_endpoint, tmp_path):
        results = generate_batch([req("a")], mock_endpoint.url, FAST)
        assert results[0].text == "echo: prompt for a"
        assert list(tmp_path.iterdir()) == []
