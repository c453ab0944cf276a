"""Chat-completion access for every LLM role in the loop.

Each role (answering, triple extraction, query regeneration, relevance
checking, and one role per knowledge model) is bound to a backend and a
prompt template. Two backends ship: :class:`FixtureBackend`, which replays
scripted responses for deterministic tests, and :class:`HttpBackend`, which
speaks the chat-completions wire format.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .types import QueryVariant, ReferenceDoc

__all__ = [
    "ANSWER",
    "TRIPLE_EXTRACT",
    "QUERY_GEN",
    "RELEVANCE",
    "knowledge_role",
    "BackendError",
    "GatewayError",
    "PromptTemplate",
    "ChatRequest",
    "ChatExchange",
    "Trace",
    "Backend",
    "FixtureBackend",
    "HttpBackend",
    "RoleBinding",
    "Gateway",
    "fixture_key",
    "parse_triples",
    "parse_verdict",
    "format_references",
]

logger = logging.getLogger(__name__)

ANSWER = "answer"
TRIPLE_EXTRACT = "triple_extract"
QUERY_GEN = "query_gen"
RELEVANCE = "relevance"
_KM_PREFIX = "knowledge_model:"


def knowledge_role(name: str) -> str:
    return _KM_PREFIX + name


class BackendError(RuntimeError):
    """A backend could not produce a response."""


class GatewayError(RuntimeError):
    def __init__(self, role: str, cause: BaseException):
        self.role = role
        super().__init__(f"{role}: {cause}")


# -- prompts -------------------------------------------------------------------


class PromptTemplate:
    """Text with ``{name}`` slots; rendering refuses missing or unknown slots."""

    def __init__(self, text: str, name: str = ""):
        self.text = text
        self.name = name
        self.slots = tuple(dict.fromkeys(
            f for _, f, _, _ in string.Formatter().parse(text) if f is not None
        ))
        for s in self.slots:
            if not s.isidentifier():
                raise ValueError(f"template {name!r}: bad slot {{{s}}}")

    @classmethod
    def builtin(cls, name: str) -> "PromptTemplate":
        text = resources.files("kgrag").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
        return cls(text, name)

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        path = Path(path)
        return cls(path.read_text(encoding="utf-8"), path.stem)

    def render(self, **values: Any) -> str:
        missing = [s for s in self.slots if s not in values]
        if missing:
            raise KeyError(f"template {self.name!r}: unfilled slots {missing}")
        extra = [k for k in values if k not in self.slots]
        if extra:
            raise KeyError(f"template {self.name!r}: unknown slots {extra}")
        return self.text.format(**{k: str(v) for k, v in values.items()})


BUILTIN_TEMPLATES = {
    ANSWER: "answer",
    TRIPLE_EXTRACT: "triple_extract",
    QUERY_GEN: "query_gen",
    RELEVANCE: "relevance",
    "knowledge_model": "reference",
}


# -- requests, exchanges, trace --------------------------------------------------


def fixture_key(slots: Mapping[str, Any]) -> str:
    """Stable short hash of a request's slot values."""
    blob = json.dumps({k: str(v) for k, v in slots.items()}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ChatRequest:
    role: str
    turn: int
    prompt: str
    slots: Mapping[str, str]
    system: str = "You are a helpful assistant."
    temperature: float = 0.0
    max_tokens: int = 512

    @property
    def key(self) -> str:
        return fixture_key(self.slots)


@dataclass
class ChatExchange:
    role: str
    turn: int
    key: str
    prompt: str
    response: str | None
    error: str | None = None
    latency_ms: float | None = None
    prompt_tokens: int | None = None
    completion_tokens: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class Trace:
    """Append-only, thread-safe log of exchanges in completion order."""

    def __init__(self, path: str | Path | None = None, timing: bool = True):
        self._items: list[ChatExchange] = []
        self._lock = threading.Lock()
        self._path = Path(path) if path is not None else None
        self.timing = timing
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, ex: ChatExchange) -> None:
        if not self.timing:
            ex.latency_ms = None
        with self._lock:
            self._items.append(ex)
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")

    @property
    def exchanges(self) -> list[ChatExchange]:
        with self._lock:
            return list(self._items)

    def __len__(self) -> int:
        return len(self._items)

    @staticmethod
    def read(path: str | Path) -> list[ChatExchange]:
        with open(path, encoding="utf-8") as fh:
            return [ChatExchange(**json.loads(line)) for line in fh if line.strip()]


# -- backends ----------------------------------------------------------------------


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class FixtureBackend:
    """Scripted responses looked up by role, turn and request content.

    Each record is a mapping with ``role`` and either ``response`` or
    ``error`` (the latter simulates a failed call). Optional selectors:

    ``turn``
        Only match this turn; omitted or ``null`` matches every turn.
    ``key``
        Only match requests whose :func:`fixture_key` equals this value.
    ``contains``
        Only match requests whose rendered prompt contains this substring.

    A request is served by the most specific matching record: an exact key
    beats ``contains``, which beats a bare role record; within each class a
    turn-specific record beats a turn-agnostic one. Ties go to the earliest
    record.
    """

    def __init__(self, records: Iterable[Mapping[str, Any]] = ()):
        self.records = [dict(r) for r in records]
        for i, r in enumerate(self.records):
            if "role" not in r:
                raise ValueError(f"fixture record {i} has no role")
            if ("response" in r) == ("error" in r):
                raise ValueError(f"fixture record {i} needs exactly one of response/error")
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "FixtureBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.loads(line) for line in fh if line.strip() and not line.lstrip().startswith("#"))

    @classmethod
    def from_exchanges(cls, exchanges: Iterable[ChatExchange]) -> "FixtureBackend":
        """Backend that replays a recorded trace exactly."""
        recs = []
        for ex in exchanges:
            rec = {"role": ex.role, "turn": ex.turn, "key": ex.key}
            if ex.error is not None:
                rec["error"] = ex.error
            else:
                rec["response"] = ex.response
            recs.append(rec)
        return cls(recs)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, ensure_ascii=False) + "\n")

    def _rank(self, rec: Mapping[str, Any], req: ChatRequest) -> int | None:
        if rec["role"] != req.role:
            return None
        turn = rec.get("turn")
        if turn is not None and turn != req.turn:
            return None
        if rec.get("key") is not None:
            if rec["key"] != req.key:
                return None
            kind = 0
        elif rec.get("contains") is not None:
            if rec["contains"] not in req.prompt:
                return None
            kind = 1
        else:
            kind = 2
        return 2 * kind + (0 if turn is not None else 1)

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        best, best_rank = None, None
        for rec in self.records:
            rank = self._rank(rec, request)
            if rank is not None and (best_rank is None or rank < best_rank):
                best, best_rank = rec, rank
        if best is None:
            raise BackendError(f"no fixture for role={request.role} turn={request.turn} key={request.key}")
        if "error" in best:
            raise BackendError(f"scripted failure: {best['error']}")
        return str(best["response"])


class HttpBackend:
    """Chat-completions client with exponential backoff.

    Transport errors, HTTP 429 and 5xx are retried, with at most
    ``max_attempts`` calls in total; the k-th retry waits
    ``backoff * 2**(k-1)`` seconds. Other 4xx responses fail at once.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env, "") if api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)
        self.last_usage: dict | None = None

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last: BaseException | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise BackendError(f"malformed response: {exc!r}") from exc
            self.last_usage = body.get("usage")
            return content or ""
        raise BackendError(f"request failed after {self.max_attempts} attempts: {last}") from last

    def close(self) -> None:
        self._client.close()


# -- parsing ----------------------------------------------------------------------

_PAREN = re.compile(r"\(([^()]*)\)")
_VERDICT = re.compile(r"\b(yes|no|true|false)\b", re.IGNORECASE)


def parse_triples(text: str) -> list[tuple[str, str, str]]:
    """All ``(head, relation, tail)`` groups in ``text``; anything else is ignored."""
    out = []
    for m in _PAREN.finditer(text):
        parts = [p.strip().strip("\"'") for p in m.group(1).split(",")]
        if len(parts) == 3 and all(parts):
            out.append((parts[0], parts[1], parts[2]))
    return out


def parse_verdict(text: str) -> bool:
    """First yes/no/true/false token decides; no token means not relevant."""
    m = _VERDICT.search(text)
    return bool(m) and m.group(1).lower() in ("yes", "true")


def format_references(refs: Sequence[ReferenceDoc | str]) -> str:
    if not refs:
        return "(none)"
    texts = [r.text if isinstance(r, ReferenceDoc) else r for r in refs]
    return "\n".join(f"[{i}] {' '.join(t.split())}" for i, t in enumerate(texts, start=1))


# -- gateway ------------------------------------------------------------------------


@dataclass
class RoleBinding:
    backend: Backend
    template: PromptTemplate
    system: str = "You are a helpful assistant."
    temperature: float = 0.0
    max_tokens: int = 512


@dataclass
class Gateway:
    """Role-aware front end over one or more backends.

    Parameters
    ----------
    bindings : dict
        Role name to :class:`RoleBinding`. Knowledge models are bound under
        ``knowledge_role(name)``.
    knowledge_models : list of str
        Registered knowledge-model names, in candidate order.
    trace : Trace
        Receives every exchange, successful or not.
    max_concurrency : int
        Parallel reference-generation calls per turn.
    """

    bindings: dict[str, RoleBinding]
    knowledge_models: list[str] = field(default_factory=list)
    trace: Trace = field(default_factory=Trace)
    max_concurrency: int = 1

    @classmethod
    def with_backend(
        cls,
        backend: Backend,
        knowledge_models: Sequence[str],
        trace: Trace | None = None,
        max_concurrency: int = 1,
        templates: Mapping[str, PromptTemplate] | None = None,
    ) -> "Gateway":
        """Bind every role to the same backend with the built-in templates."""
        templates = dict(templates or {})
        bindings = {}
        for role in (ANSWER, TRIPLE_EXTRACT, QUERY_GEN, RELEVANCE):
            bindings[role] = RoleBinding(backend, templates.get(role) or PromptTemplate.builtin(BUILTIN_TEMPLATES[role]))
        ref_tpl = templates.get("knowledge_model") or PromptTemplate.builtin("reference")
        for name in knowledge_models:
            bindings[knowledge_role(name)] = RoleBinding(backend, ref_tpl)
        return cls(bindings, list(knowledge_models), trace if trace is not None else Trace(), max_concurrency)

    def _call(self, role: str, turn: int, **slots: Any) -> str:
        binding = self.bindings.get(role)
        if binding is None:
            raise GatewayError(role, KeyError("role is not bound"))
        slots = {k: str(v) for k, v in slots.items()}
        req = ChatRequest(role, turn, binding.template.render(**slots), slots,
                          binding.system, binding.temperature, binding.max_tokens)
        start = time.perf_counter()
        try:
            text = binding.backend.complete(req)
        except Exception as exc:
            self.trace.append(ChatExchange(role, turn, req.key, req.prompt, None, error=str(exc),
                                           latency_ms=(time.perf_counter() - start) * 1e3))
            raise GatewayError(role, exc) from exc
        usage = getattr(binding.backend, "last_usage", None) or {}
        self.trace.append(ChatExchange(role, turn, req.key, req.prompt, text,
                                       latency_ms=(time.perf_counter() - start) * 1e3,
                                       prompt_tokens=usage.get("prompt_tokens"),
                                       completion_tokens=usage.get("completion_tokens")))
        return text

    def generate_answer(self, question: str, refs: Sequence[ReferenceDoc], turn: int = 0) -> str:
        if not question.strip():
            raise ValueError("empty question")
        text = self._call(ANSWER, turn, question=question, references=format_references(refs)).strip()
        if not text:
            raise GatewayError(ANSWER, BackendError("empty answer"))
        return text

    def extract_triples(self, text: str, turn: int = 0) -> list[tuple[str, str, str]]:
        return parse_triples(self._call(TRIPLE_EXTRACT, turn, text=text))

    def regenerate_query(self, question: str, refs: Sequence[ReferenceDoc], answer: str, turn: int) -> str:
        """Query for retrieval round ``turn``; round 1 uses the question itself."""
        if turn <= 1:
            return question
        q = self._call(QUERY_GEN, turn, question=question, references=format_references(refs), answer=answer).strip()
        return q or question

    def relevance_check(self, doc: ReferenceDoc | str, question: str, entities: Sequence[str], turn: int = 0) -> bool:
        text = doc.text if isinstance(doc, ReferenceDoc) else doc
        reply = self._call(RELEVANCE, turn, question=question, document=text,
                           entities=", ".join(entities) if entities else "(none)")
        return parse_verdict(reply)

    def generate_reference(self, model_name: str, query: str, variant: QueryVariant = "plain", turn: int = 0) -> ReferenceDoc | None:
        """One document from a knowledge model, or ``None`` if the call failed."""
        if knowledge_role(model_name) not in self.bindings:
            raise KeyError(f"knowledge model {model_name!r} is not registered")
        try:
            text = self._call(knowledge_role(model_name), turn, query=query).strip()
        except GatewayError as exc:
            logger.warning("skipping reference from %s (%s query): %s", model_name, variant, exc)
            return None
        if not text:
            logger.warning("skipping empty reference from %s (%s query)", model_name, variant)
            return None
        return ReferenceDoc(text=text, source_model=model_name, query_variant=variant, turn_added=turn)

    def generate_references(
        self,
        jobs: Sequence[tuple[str, str, QueryVariant]],
        turn: int,
    ) -> list[ReferenceDoc | None]:
        """Run ``(model, query, variant)`` jobs, concurrently if allowed; results keep job order."""
        if self.max_concurrency <= 1 or len(jobs) <= 1:
            return [self.generate_reference(m, q, v, turn) for m, q, v in jobs]
        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            futures = [pool.submit(self.generate_reference, m, q, v, turn) for m, q, v in jobs]
            return [f.result() for f in futures]
