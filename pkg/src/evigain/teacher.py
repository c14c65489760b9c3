"""Teacher providers: per-token log-probabilities of a forced answer.

Three sources produce the same `TokenLogProbSequence` signal:

* `MockTeacher`: a deterministic logistic stand-in keyed on token overlap
  with the document and query.  Used for tests, demos, and desk-scale runs.
* `HttpTeacher`: a client for an inference endpoint that echoes per-token
  log-probabilities for a forced continuation (the answer appended to the
  prompt).  Retries with exponential backoff; in-flight requests are
  bounded by a semaphore so it is safe to drive from many workers.
* `load_logprob_records`: precomputed records from a JSONL file, one
  `{"triplet_id", "variant", "tokens", "logprobs"}` object per line.

Attachment URIs are forwarded verbatim to the endpoint and ignored by the
mock; no media is ever decoded here.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Iterable

from .errors import (
    InvalidInputError,
    MissingLogprobsError,
    RecordParseError,
    TeacherEndpointError,
    TokenAlignmentError,
)
from .jsonl import obj_hash, read_jsonl, write_jsonl
from .text import tokenize

DEFAULT_PROMPT_TEMPLATE = "Context: {doc}\nQuestion: {query}\nAnswer:"
EMPTY_DOC_PROMPT_TEMPLATE = "Question: {query}\nAnswer:"

VARIANT_WITH_DOC = "with_doc"
VARIANT_WITHOUT_DOC = "without_doc"
VARIANTS = (VARIANT_WITH_DOC, VARIANT_WITHOUT_DOC)


@dataclass(frozen=True)
class TokenLogProbSequence:
    """Natural-log probabilities of the answer tokens, in order."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise InvalidInputError("token sequence must be nonempty")
        if len(self.tokens) != len(self.logprobs):
            raise InvalidInputError(
                f"tokens ({len(self.tokens)}) and logprobs ({len(self.logprobs)}) "
                "must have equal length"
            )
        for lp in self.logprobs:
            if not math.isfinite(lp) or lp > 0.0:
                raise InvalidInputError(f"logprob {lp!r} must be finite and <= 0")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TeacherRequest:
    """One scoring request: the answer is the forced continuation."""

    query: str
    answer: str
    document: str | None = None
    attachment_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.query:
            raise InvalidInputError("query must be nonempty")
        if not self.answer:
            raise InvalidInputError("answer must be nonempty")


@dataclass(frozen=True)
class MockTeacherParams:
    """Coefficients of the mock's per-token logistic model.

    Per answer token t the probability is
    clamp(logistic(a0 + a1*[t in doc] + a2*[t in query]), epsilon, 1-epsilon).
    Defaults separate the overlap/no-overlap cases cleanly
    (p ~ 0.27 without document support, ~ 0.82 with it).
    """

    a0: float = -1.0
    a1: float = 2.5
    a2: float = 0.5
    epsilon: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 0.5:
            raise InvalidInputError(f"epsilon must be in (0, 0.5), got {self.epsilon!r}")


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def mock_logprobs(request: TeacherRequest, params: MockTeacherParams) -> TokenLogProbSequence:
    """Deterministic per-token log-probabilities from the logistic mock.

    Tokenization is whitespace split + lowercase + punctuation strip.
    A missing document means the document-overlap indicator is 0 for
    every token.  Pure: identical inputs yield identical outputs.
    """
    answer_tokens = tokenize(request.answer)
    if not answer_tokens:
        raise InvalidInputError("answer has no tokens after tokenization")
    doc_tokens = set(tokenize(request.document)) if request.document else set()
    query_tokens = set(tokenize(request.query))

    logprobs = []
    for tok in answer_tokens:
        z = params.a0
        if tok in doc_tokens:
            z += params.a1
        if tok in query_tokens:
            z += params.a2
        p = min(max(_logistic(z), params.epsilon), 1.0 - params.epsilon)
        logprobs.append(math.log(p))
    return TokenLogProbSequence(tokens=tuple(answer_tokens), logprobs=tuple(logprobs))


class MockTeacher:
    """Provider wrapper around `mock_logprobs` with fixed params."""

    def __init__(self, params: MockTeacherParams | None = None):
        self.params = params or MockTeacherParams()

    def logprobs(self, request: TeacherRequest) -> TokenLogProbSequence:
        return mock_logprobs(request, self.params)

    def config_hash(self) -> str:
        return obj_hash({"kind": "mock", "params": vars(self.params)})


@dataclass
class ClientOptions:
    """HTTP teacher client knobs.  The API key is read from the environment
    (`api_key_env`), never from a CLI flag."""

    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    api_key_env: str = "EVIGAIN_API_KEY"
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    empty_doc_template: str = EMPTY_DOC_PROMPT_TEMPLATE


def build_prompt(request: TeacherRequest, opts: ClientOptions) -> str:
    if request.document is None:
        return opts.empty_doc_template.format(query=request.query)
    return opts.prompt_template.format(doc=request.document, query=request.query)


def _default_transport(url: str, body: bytes, headers: dict[str, str], timeout: float) -> bytes:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


class HttpTeacher:
    """Forced-continuation scoring against a remote endpoint.

    POSTs `{"prompt", "continuation", "attachments", "echo_logprobs": true}`
    and expects `{"tokens": [...], "logprobs": [...]}` covering exactly the
    continuation (prompt tokens excluded).  The returned tokens must
    reconstruct the answer up to whitespace, otherwise a
    `TokenAlignmentError` is raised.
    """

    def __init__(
        self,
        endpoint: str,
        opts: ClientOptions | None = None,
        transport: Callable[[str, bytes, dict[str, str], float], bytes] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.opts = opts or ClientOptions()
        self._transport = transport or _default_transport
        self._sleep = sleep
        self._gate = threading.Semaphore(self.opts.max_in_flight)

    def config_hash(self) -> str:
        return obj_hash(
            {
                "kind": "http",
                "endpoint": self.endpoint,
                "prompt_template": self.opts.prompt_template,
                "empty_doc_template": self.opts.empty_doc_template,
            }
        )

    def logprobs(self, request: TeacherRequest) -> TokenLogProbSequence:
        payload = {
            "prompt": build_prompt(request, self.opts),
            "continuation": request.answer,
            "attachments": list(request.attachment_refs),
            "echo_logprobs": True,
        }
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.opts.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_err: Exception | None = None
        for attempt in range(self.opts.max_retries + 1):
            if attempt > 0:
                self._sleep(self.opts.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    raw = self._transport(self.endpoint, body, headers, self.opts.timeout)
                return self._parse_response(raw, request.answer)
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as e:
                last_err = e
                continue
        raise TeacherEndpointError(
            f"endpoint {self.endpoint} failed after {self.opts.max_retries + 1} attempts: {last_err}"
        ) from last_err

    @staticmethod
    def _parse_response(raw: bytes, answer: str) -> TokenLogProbSequence:
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise TeacherEndpointError(f"endpoint returned non-JSON response: {e}") from e
        tokens = data.get("tokens")
        logprobs = data.get("logprobs")
        if not isinstance(tokens, list) or not isinstance(logprobs, list) or not tokens:
            raise MissingLogprobsError("response is missing tokens/logprobs arrays")
        reconstructed = "".join("".join(str(t).split()) for t in tokens)
        expected = "".join(answer.split())
        if reconstructed != expected:
            raise TokenAlignmentError(
                f"returned tokens reconstruct {reconstructed!r}, expected {expected!r}"
            )
        return TokenLogProbSequence(
            tokens=tuple(str(t) for t in tokens),
            logprobs=tuple(float(lp) for lp in logprobs),
        )


@dataclass(frozen=True)
class LogProbRecord:
    triplet_id: str
    variant: str
    sequence: TokenLogProbSequence

    def to_dict(self) -> dict:
        return {
            "triplet_id": self.triplet_id,
            "variant": self.variant,
            "tokens": list(self.sequence.tokens),
            "logprobs": list(self.sequence.logprobs),
        }


def load_logprob_records(path: str | os.PathLike) -> list[LogProbRecord]:
    """Parse and validate a logprob-record JSONL file.

    Raises `RecordParseError` with the line number on malformed lines and
    `InvalidInputError` carrying the record id on invariant violations.
    """
    records = []
    for line_no, rec in read_jsonl(path):
        for key in ("triplet_id", "variant", "tokens", "logprobs"):
            if key not in rec:
                raise RecordParseError(f"missing key {key!r}", path=str(path), line=line_no)
        triplet_id = str(rec["triplet_id"])
        variant = rec["variant"]
        if variant not in VARIANTS:
            raise InvalidInputError(
                f"record {triplet_id!r}: variant {variant!r} not in {VARIANTS}"
            )
        try:
            seq = TokenLogProbSequence(
                tokens=tuple(str(t) for t in rec["tokens"]),
                logprobs=tuple(float(lp) for lp in rec["logprobs"]),
            )
        except InvalidInputError as e:
            raise InvalidInputError(f"record {triplet_id!r}: {e}") from e
        records.append(LogProbRecord(triplet_id=triplet_id, variant=variant, sequence=seq))
    return records


def save_logprob_records(path: str | os.PathLike, records: Iterable[LogProbRecord]) -> int:
    return write_jsonl(path, (r.to_dict() for r in records))


def fetch_logprobs(
    endpoint: str,
    request: TeacherRequest,
    opts: ClientOptions | None = None,
    transport: Callable[[str, bytes, dict[str, str], float], bytes] | None = None,
) -> TokenLogProbSequence:
    """One-shot functional form of `HttpTeacher.logprobs`."""
    return HttpTeacher(endpoint, opts=opts, transport=transport).logprobs(request)
