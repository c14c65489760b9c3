"""Teacher providers: the deterministic mock, the record file loader, and
the HTTP client (exercised against a fake transport, no network)."""

import json
import math
import os
import threading
import urllib.error

import pytest

from evigain.errors import (
    InvalidInputError,
    MissingLogprobsError,
    RecordParseError,
    TeacherEndpointError,
    TokenAlignmentError,
)
from evigain.teacher import (
    ClientOptions,
    HttpTeacher,
    LogProbRecord,
    MockTeacher,
    MockTeacherParams,
    TeacherRequest,
    TokenLogProbSequence,
    build_prompt,
    fetch_logprobs,
    load_logprob_records,
    mock_logprobs,
    save_logprob_records,
)


class TestTokenLogProbSequence:
    def test_valid(self):
        seq = TokenLogProbSequence(tokens=("a", "b"), logprobs=(-0.5, 0.0))
        assert len(seq) == 2

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            TokenLogProbSequence(tokens=(), logprobs=())

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            TokenLogProbSequence(tokens=("a",), logprobs=(-0.1, -0.2))

    def test_positive_logprob_rejected(self):
        with pytest.raises(InvalidInputError):
            TokenLogProbSequence(tokens=("a",), logprobs=(0.1,))

    def test_nonfinite_logprob_rejected(self):
        with pytest.raises(InvalidInputError):
            TokenLogProbSequence(tokens=("a",), logprobs=(float("-inf"),))


class TestTeacherRequest:
    def test_empty_query_rejected(self):
        with pytest.raises(InvalidInputError):
            TeacherRequest(query="", answer="x")

    def test_empty_answer_rejected(self):
        with pytest.raises(InvalidInputError):
            TeacherRequest(query="q", answer="")


class TestMockTeacher:
    def test_overlap_probability(self):
        """p = logistic(a0 + a1) when the token appears in the document only."""
        req = TeacherRequest(
            query="capital of france?",
            answer="paris",
            document="paris is lovely",
        )
        seq = mock_logprobs(req, MockTeacherParams(a0=-1.0, a1=2.5, a2=0.5, epsilon=0.01))
        p = math.exp(seq.logprobs[0])
        assert p == pytest.approx(1.0 / (1.0 + math.exp(-1.5)), rel=1e-12)
        assert seq.logprobs[0] == pytest.approx(-0.2014132779827524, abs=1e-12)

    def test_no_document_logistic_zero(self):
        req = TeacherRequest(query="capital of france?", answer="paris")
        seq = mock_logprobs(req, MockTeacherParams(a0=0.0, a1=2.5, a2=0.0, epsilon=0.01))
        assert seq.logprobs[0] == pytest.approx(-math.log(2), abs=1e-15)

    def test_clamp_upper_bound(self):
        req = TeacherRequest(query="q", answer="anything", document="doc")
        seq = mock_logprobs(req, MockTeacherParams(a0=1000.0, a1=0.0, a2=0.0, epsilon=0.01))
        assert math.exp(seq.logprobs[0]) == pytest.approx(0.99, abs=1e-12)

    def test_clamp_lower_bound(self):
        req = TeacherRequest(query="q", answer="anything")
        seq = mock_logprobs(req, MockTeacherParams(a0=-1000.0, a1=0.0, a2=0.0, epsilon=0.01))
        assert math.exp(seq.logprobs[0]) == pytest.approx(0.01, abs=1e-12)

    def test_tokenization_lowercase_punct(self):
        req = TeacherRequest(query="q", answer="Paris, France!")
        seq = mock_logprobs(req, MockTeacherParams())
        assert seq.tokens == ("paris", "france")

    def test_empty_answer_after_tokenization(self):
        req = TeacherRequest(query="q", answer="..!!..")
        with pytest.raises(InvalidInputError):
            mock_logprobs(req, MockTeacherParams())

    def test_referential_transparency(self):
        req = TeacherRequest(query="where is mars", answer="mars is a planet",
                             document="mars the red planet")
        params = MockTeacherParams()
        a = mock_logprobs(req, params)
        b = mock_logprobs(req, params)
        assert a == b

    def test_document_overlap_monotonicity(self):
        """With a1 > 0, adding a document containing an answer token never
        decreases that token's logprob."""
        params = MockTeacherParams(a0=-0.3, a1=1.7, a2=0.4, epsilon=0.05)
        answers = ["alpha beta gamma", "one two three four five", "x"]
        for answer in answers:
            req_without = TeacherRequest(query="some question", answer=answer)
            req_with = TeacherRequest(query="some question", answer=answer, document=answer)
            lp_without = mock_logprobs(req_without, params).logprobs
            lp_with = mock_logprobs(req_with, params).logprobs
            for with_doc, without_doc in zip(lp_with, lp_without):
                assert with_doc >= without_doc

    def test_epsilon_validation(self):
        with pytest.raises(InvalidInputError):
            MockTeacherParams(epsilon=0.5)
        with pytest.raises(InvalidInputError):
            MockTeacherParams(epsilon=0.0)

    def test_attachments_ignored(self):
        params = MockTeacherParams()
        base = TeacherRequest(query="q", answer="cat")
        with_att = TeacherRequest(query="q", answer="cat", attachment_refs=("img://x",))
        assert mock_logprobs(base, params) == mock_logprobs(with_att, params)


class TestRecordFile:
    def _records(self):
        return [
            LogProbRecord("t1", "with_doc", TokenLogProbSequence(("a", "b"), (-0.1, -0.2))),
            LogProbRecord("t1", "without_doc", TokenLogProbSequence(("a", "b"), (-0.9, -1.1))),
        ]

    def test_round_trip_byte_identical(self, tmp_path):
        path = tmp_path / "records.jsonl"
        save_logprob_records(path, self._records())
        first = path.read_bytes()
        save_logprob_records(path, load_logprob_records(path))
        assert path.read_bytes() == first

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"triplet_id": "t", "variant": "with_doc", "tokens": ["a"], "logprobs": [-1]}\nnot json\n')
        with pytest.raises(RecordParseError) as exc:
            load_logprob_records(path)
        assert exc.value.line == 2

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"triplet_id": "t", "tokens": ["a"], "logprobs": [-1]}\n')
        with pytest.raises(RecordParseError):
            load_logprob_records(path)

    def test_invariant_violation_names_record(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"triplet_id": "t9", "variant": "with_doc", "tokens": ["a"], "logprobs": [0.5]}\n')
        with pytest.raises(InvalidInputError, match="t9"):
            load_logprob_records(path)

    def test_unknown_variant(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"triplet_id": "t", "variant": "maybe_doc", "tokens": ["a"], "logprobs": [-1]}\n')
        with pytest.raises(InvalidInputError, match="maybe_doc"):
            load_logprob_records(path)


class _FakeTransport:
    """Scripted transport: pops one canned behavior per call."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []
        self.lock = threading.Lock()
        self.live = 0
        self.max_live = 0

    def __call__(self, url, body, headers, timeout):
        with self.lock:
            self.live += 1
            self.max_live = max(self.max_live, self.live)
            self.calls.append((url, json.loads(body.decode()), dict(headers)))
            action = self.script.pop(0) if self.script else self.script_default
        try:
            if isinstance(action, Exception):
                raise action
            return action
        finally:
            with self.lock:
                self.live -= 1


def _ok_response(tokens, logprobs):
    return json.dumps({"tokens": tokens, "logprobs": logprobs}).encode()


class TestHttpTeacher:
    def _opts(self, **kw):
        kw.setdefault("backoff_base", 0.0)
        return ClientOptions(**kw)

    def test_success(self):
        transport = _FakeTransport([_ok_response(["par", "is"], [-0.3, -0.1])])
        teacher = HttpTeacher("http://teach.local/score", opts=self._opts(), transport=transport)
        seq = teacher.logprobs(TeacherRequest(query="q", answer="paris", document="d"))
        assert seq.tokens == ("par", "is")
        assert seq.logprobs == (-0.3, -0.1)
        url, payload, headers = transport.calls[0]
        assert payload["continuation"] == "paris"
        assert payload["echo_logprobs"] is True
        assert "Context: d" in payload["prompt"]

    def test_prompt_without_document(self):
        req = TeacherRequest(query="why", answer="because")
        assert build_prompt(req, ClientOptions()) == "Question: why\nAnswer:"

    def test_retry_then_success(self):
        sleeps = []
        transport = _FakeTransport([
            urllib.error.URLError("down"),
            urllib.error.URLError("still down"),
            _ok_response(["ok"], [-0.5]),
        ])
        teacher = HttpTeacher(
            "http://teach.local", opts=self._opts(max_retries=3, backoff_base=0.25),
            transport=transport, sleep=sleeps.append,
        )
        seq = teacher.logprobs(TeacherRequest(query="q", answer="ok"))
        assert seq.logprobs == (-0.5,)
        assert sleeps == [0.25, 0.5]  # exponential backoff

    def test_retries_exhausted(self):
        transport = _FakeTransport([urllib.error.URLError("down")] * 3)
        teacher = HttpTeacher("http://teach.local", opts=self._opts(max_retries=2),
                              transport=transport, sleep=lambda _: None)
        with pytest.raises(TeacherEndpointError, match="3 attempts"):
            teacher.logprobs(TeacherRequest(query="q", answer="ok"))

    def test_non_json_response(self):
        transport = _FakeTransport([b"<html>502 bad gateway</html>"])
        teacher = HttpTeacher("http://teach.local", opts=self._opts(max_retries=0),
                              transport=transport)
        with pytest.raises(TeacherEndpointError, match="non-JSON"):
            teacher.logprobs(TeacherRequest(query="q", answer="ok"))

    def test_missing_logprobs(self):
        transport = _FakeTransport([json.dumps({"text": "no logprobs here"}).encode()])
        teacher = HttpTeacher("http://teach.local", opts=self._opts(max_retries=0),
                              transport=transport)
        with pytest.raises(MissingLogprobsError):
            teacher.logprobs(TeacherRequest(query="q", answer="ok"))

    def test_token_alignment(self):
        transport = _FakeTransport([_ok_response(["completely", "different"], [-1.0, -1.0])])
        teacher = HttpTeacher("http://teach.local", opts=self._opts(max_retries=0),
                              transport=transport)
        with pytest.raises(TokenAlignmentError):
            teacher.logprobs(TeacherRequest(query="q", answer="expected answer"))

    def test_alignment_ignores_whitespace(self):
        transport = _FakeTransport([_ok_response(["two ", " words"], [-1.0, -1.0])])
        teacher = HttpTeacher("http://teach.local", opts=self._opts(max_retries=0),
                              transport=transport)
        seq = teacher.logprobs(TeacherRequest(query="q", answer="two words"))
        assert len(seq) == 2

    def test_api_key_header(self, monkeypatch):
        monkeypatch.setenv("EVIGAIN_API_KEY", "sk-secret")
        transport = _FakeTransport([_ok_response(["ok"], [-0.5])])
        teacher = HttpTeacher("http://teach.local", opts=self._opts(), transport=transport)
        teacher.logprobs(TeacherRequest(query="q", answer="ok"))
        assert transport.calls[0][2]["Authorization"] == "Bearer sk-secret"

    def test_attachments_forwarded(self):
        transport = _FakeTransport([_ok_response(["ok"], [-0.5])])
        teacher = HttpTeacher("http://teach.local", opts=self._opts(), transport=transport)
        teacher.logprobs(TeacherRequest(query="q", answer="ok",
                                        attachment_refs=("img://a", "aud://b")))
        assert transport.calls[0][1]["attachments"] == ["img://a", "aud://b"]

    def test_fetch_logprobs_one_shot(self):
        transport = _FakeTransport([_ok_response(["par", "is"], [-0.3, -0.1])])
        seq = fetch_logprobs("http://teach.local", TeacherRequest(query="q", answer="paris"),
                             opts=self._opts(), transport=transport)
        assert seq.logprobs == (-0.3, -0.1)

    def test_in_flight_bound(self):
        """Concurrent callers never exceed max_in_flight simultaneous requests."""
        import time
        from concurrent.futures import ThreadPoolExecutor

        class SlowTransport(_FakeTransport):
            def __call__(self, url, body, headers, timeout):
                with self.lock:
                    self.live += 1
                    self.max_live = max(self.max_live, self.live)
                time.sleep(0.01)
                try:
                    return _ok_response(["ok"], [-0.5])
                finally:
                    with self.lock:
                        self.live -= 1

        transport = SlowTransport([])
        teacher = HttpTeacher("http://teach.local",
                              opts=self._opts(max_in_flight=2), transport=transport)
        req = TeacherRequest(query="q", answer="ok")
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(lambda _: teacher.logprobs(req), range(16)))
        assert transport.max_live <= 2
