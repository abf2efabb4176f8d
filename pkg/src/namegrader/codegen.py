"""Prompt construction, completion clients, response caching, and code
extraction.

The generator only ever sees the student's proposed function name plus the
question's parameter list and author assumptions. The snippet being
described and its reference solution must never leak into a prompt; that
is what makes the regenerated code a test of the name, not of the code.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

import requests

from .domain import Question
from .errors import (
    EmptyCompletionError,
    NameMismatchError,
    NoCodeError,
    QuotaError,
    TransportError,
    UnknownCompletionError,
)

logger = logging.getLogger(__name__)

PROMPT_VERSION = "v1"

API_KEY_ENV = "EIPL_API_KEY"

DEFAULT_RETRY_BUDGET = 3
BACKOFF_BASE_S = 0.5

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_FENCE_LINE_RE = re.compile(r"^```.*$", re.MULTILINE)
_DEF_RE = re.compile(r"^[ \t]*(?:async[ \t]+)?def[ \t]+([A-Za-z_][A-Za-z0-9_]*)[ \t]*\(", re.MULTILINE)


@dataclass(frozen=True)
class GenerationRequest:
    """Everything needed to produce (or look up) the variants for one name.

    ``seed_index`` is the ordinal of the first variant; variant i is cached
    under seed ``seed_index + i`` so distinct samples of the same prompt
    never collide.
    """

    question_id: str
    function_name: str
    prompt: str
    model_id: str
    n_variants: int = 1
    temperature: float = 0.0
    seed_index: int = 0
    prompt_version: str = PROMPT_VERSION

    def __post_init__(self) -> None:
        if self.n_variants < 1:
            raise ValueError("n_variants must be at least 1")
        if not math.isfinite(self.temperature):
            raise ValueError("temperature must be finite")


@dataclass(frozen=True)
class GeneratedVariant:
    """One completion: the raw model output plus the extracted code.

    ``code`` is empty when no well-formed definition of the requested
    function could be extracted; grading treats such variants as failing.
    """

    index: int
    raw_output: str
    code: str
    cache_hit: bool


class GenerationClient(Protocol):
    """A source of completions; must be safe for concurrent use."""

    def complete(self, prompt: str, request: GenerationRequest, seed_index: int) -> str:
        ...


def _load_prompt_template(version: str = PROMPT_VERSION) -> str:
    path = resources.files("namegrader").joinpath(f"data/prompts/{version}.txt")
    return path.read_text(encoding="utf-8")


def build_prompt(question: Question, function_name: str) -> str:
    """Render the generation prompt for a validated function name.

    The prompt names the function, lists the parameter names with their
    annotations, and quotes the author's assumptions verbatim. It asks for
    a single fenced code block. The question's own code never appears.
    """
    template = _load_prompt_template()
    return template.format(
        language=question.subject_language.capitalize(),
        function_name=function_name,
        signature=question.signature(),
        assumptions=question.assumptions,
    )


def make_request(
    question: Question,
    function_name: str,
    *,
    model_id: str,
    n_variants: int = 1,
    temperature: float = 0.0,
    seed_index: int = 0,
) -> GenerationRequest:
    """Build a request with the prompt rendered from the question."""
    return GenerationRequest(
        question_id=question.id,
        function_name=function_name,
        prompt=build_prompt(question, function_name),
        model_id=model_id,
        n_variants=n_variants,
        temperature=temperature,
        seed_index=seed_index,
    )


def extract_code(raw_output: str, function_name: str) -> str:
    """Pull runnable code out of a model completion.

    Returns the contents of the first complete fenced code block, or the
    trimmed raw output when there is no fence. The result must define the
    requested function. Idempotent on its own successful output.
    """
    if not raw_output:
        raise NoCodeError("completion is empty")

    match = _FENCE_RE.search(raw_output)
    if match:
        code = match.group(1)
    else:
        # Unterminated fences would otherwise poison compilation; drop any
        # bare fence-marker lines before trimming.
        code = _FENCE_LINE_RE.sub("", raw_output)
    code = code.strip()

    defined = _DEF_RE.findall(code)
    if not defined:
        raise NoCodeError("no function definition found in completion")
    if function_name not in defined:
        raise NameMismatchError(
            f"completion defines {', '.join(repr(n) for n in defined)} "
            f"but {function_name!r} was requested"
        )
    return code


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class VariantCache:
    """Append-only JSONL store of raw completions.

    One record per variant, keyed by (model_id, prompt hash, temperature,
    seed_index): any change to the model, the prompt text, the sampling
    temperature, or the variant ordinal yields a fresh key. Writes are
    serialized with a lock (single-writer, multi-reader contract); readers
    in other processes must reopen the file to see appends.

    With ``path=None`` the cache lives only in memory.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: dict[tuple, dict[str, Any]] = {}
        if self._path is not None and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._records[self._key_of(record)] = record

    @staticmethod
    def key(model_id: str, prompt_sha256: str, temperature: float, seed_index: int) -> tuple:
        return (model_id, prompt_sha256, float(temperature), int(seed_index))

    @classmethod
    def _key_of(cls, record: dict[str, Any]) -> tuple:
        return cls.key(
            record["model_id"],
            record["prompt_sha256"],
            record["temperature"],
            record["seed_index"],
        )

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: tuple) -> dict[str, Any] | None:
        return self._records.get(key)

    def put(
        self,
        *,
        model_id: str,
        prompt_sha256: str,
        temperature: float,
        seed_index: int,
        prompt_version: str,
        raw_output: str,
    ) -> dict[str, Any]:
        record = {
            "model_id": model_id,
            "prompt_sha256": prompt_sha256,
            "temperature": float(temperature),
            "seed_index": int(seed_index),
            "prompt_version": prompt_version,
            "raw_output": raw_output,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        with self._lock:
            self._records[self._key_of(record)] = record
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
        return record


def compact_cache(path: str | Path) -> int:
    """Rewrite a cache file keeping only the latest record per key.

    Returns the number of records kept.
    """
    cache = VariantCache(path)
    records = list(cache._records.values())
    tmp = Path(path).with_suffix(".compact.tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    tmp.replace(path)
    return len(records)


class HttpChatClient:
    """Client for a chat-completions style HTTP endpoint.

    Sends ``{model, messages, temperature, n}`` as JSON to
    ``<base_url>/chat/completions``; the API key is read from the
    EIPL_API_KEY environment variable at call time. Instances hold no
    mutable state and are safe to share across workers.
    """

    def __init__(self, base_url: str, timeout_s: float = 60.0):
        base = base_url.rstrip("/")
        if not base.endswith("/chat/completions"):
            base = base + "/chat/completions"
        self._endpoint = base
        self._timeout_s = timeout_s

    def complete(self, prompt: str, request: GenerationRequest, seed_index: int) -> str:
        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "n": 1,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = requests.post(
                self._endpoint, json=payload, headers=headers, timeout=self._timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(f"request to {self._endpoint} failed: {exc}") from exc
        if response.status_code == 429:
            raise QuotaError("generation endpoint rate limited the request (429)")
        if response.status_code != 200:
            raise TransportError(
                f"generation endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        if content is None:
            raise EmptyCompletionError("completion had no content")
        return content


class MockGenerationClient:
    """Deterministic client scripted per function name.

    ``completions`` maps a function name to the ordered list of raw
    outputs its variants should receive; variant i gets entry
    ``seed_index``. Grading against this client plus a stub execution
    backend is fully offline.
    """

    def __init__(self, completions: dict[str, list[str]]):
        self._completions = dict(completions)
        self.calls = 0

    def complete(self, prompt: str, request: GenerationRequest, seed_index: int) -> str:
        self.calls += 1
        scripted = self._completions.get(request.function_name)
        if scripted is None:
            raise UnknownCompletionError(
                f"no scripted completions for name {request.function_name!r}"
            )
        if seed_index >= len(scripted):
            raise UnknownCompletionError(
                f"no scripted completion for {request.function_name!r} "
                f"at seed index {seed_index}"
            )
        return scripted[seed_index]


def _complete_with_retry(
    client: GenerationClient,
    request: GenerationRequest,
    seed_index: int,
    retry_budget: int,
    backoff_base_s: float,
    sleep,
) -> str:
    last: Exception | None = None
    for attempt in range(retry_budget):
        try:
            return client.complete(request.prompt, request, seed_index)
        except (TransportError, QuotaError) as exc:
            last = exc
            if attempt + 1 < retry_budget:
                delay = backoff_base_s * (2 ** attempt)
                logger.warning(
                    "completion attempt %d/%d failed (%s); retrying in %.1fs",
                    attempt + 1, retry_budget, exc, delay,
                )
                sleep(delay)
    assert last is not None
    raise last


def generate_variants(
    request: GenerationRequest,
    client: GenerationClient,
    cache: VariantCache | None = None,
    *,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    backoff_base_s: float = BACKOFF_BASE_S,
    sleep=time.sleep,
) -> list[GeneratedVariant]:
    """Produce the request's variants, reading through the cache.

    A variant whose (model, prompt, temperature, seed) key is already
    cached is returned with ``cache_hit=True`` and costs no client call;
    everything else is requested, persisted, then returned in index order.
    With a warm cache this function is deterministic and performs zero
    network calls.
    """
    if cache is None:
        cache = VariantCache()
    sha = prompt_hash(request.prompt)
    variants: list[GeneratedVariant] = []
    for i in range(request.n_variants):
        seed = request.seed_index + i
        key = VariantCache.key(request.model_id, sha, request.temperature, seed)
        record = cache.get(key)
        if record is not None:
            raw = record["raw_output"]
            hit = True
        else:
            raw = _complete_with_retry(
                client, request, seed, retry_budget, backoff_base_s, sleep
            )
            if not raw or not raw.strip():
                raise EmptyCompletionError(
                    f"blank completion for {request.function_name!r} at seed {seed}"
                )
            cache.put(
                model_id=request.model_id,
                prompt_sha256=sha,
                temperature=request.temperature,
                seed_index=seed,
                prompt_version=request.prompt_version,
                raw_output=raw,
            )
            hit = False
        try:
            code = extract_code(raw, request.function_name)
        except (NoCodeError, NameMismatchError):
            code = ""
        variants.append(
            GeneratedVariant(index=i, raw_output=raw, code=code, cache_hit=hit)
        )
    return variants


def extraction_failure_reason(raw_output: str, function_name: str) -> str:
    """Human-readable reason extraction failed for a variant."""
    try:
        extract_code(raw_output, function_name)
    except (NoCodeError, NameMismatchError) as exc:
        return str(exc)
    return "extraction succeeded"
