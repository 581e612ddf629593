"""LLM client contract and implementations.

Three clients ship: a generic HTTP chat-completion adapter for real
models, an interpreter-backed mock that answers every prompt correctly
(making the full pipeline verifiable without any model), and a corrupting
wrapper that flips a seeded fraction of answers to a wrong action id for
calibrating the evaluation harness.

Mocks report injected latencies instead of sleeping, so large evaluation
runs stay fast while latency aggregation stays testable.
"""

from __future__ import annotations

import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from hashlib import sha256
from random import Random

import requests

from .errors import TransportError
from .interpreter import evaluate
from .lang import parse_ica
from .model import UserQuery
from .prompts import estimate_tokens, parse_prompt, parse_response
from .retrieval import infer_intent_label
from .synth import synth_cot

DEFAULT_MAX_OUTPUT_TOKENS = 512
DEFAULT_TIMEOUT = 30.0
API_KEY_ENV = "ICA_API_KEY"

_PROMPT_ACTION_ID_RE = re.compile(r"(?:then do Action|- Action) (\d+)")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency_seconds: float


class LlmClient(ABC):
    """Completion interface: prompt in, text plus latency out.

    Implementations must honor ``max_output_tokens`` and surface timeouts
    as :class:`TransportError`.
    """

    @abstractmethod
    def complete(
        self,
        prompt: str,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
        timeout: float = DEFAULT_TIMEOUT,
    ) -> CompletionResult:
        raise NotImplementedError


def _truncate_to_tokens(text: str, max_output_tokens: int) -> str:
    limit = max_output_tokens * 4  # inverse of the 4-chars-per-token estimate
    return text if len(text) <= limit else text[:limit]


class OracleEchoClient(LlmClient):
    """Deterministic mock that replays the interpreter over the prompt.

    Parses the prompt back into (query, context, workflows), infers the
    intent lexically among the candidates exactly as the online pipeline
    does, evaluates, and answers with the templated rationale and action
    id.  With a correct prompt this client is always right, which is what
    makes end-to-end pipeline tests meaningful.
    """

    def __init__(self):
        self.latencies: list[float] = []
        self._lock = threading.Lock()

    def _answer(self, prompt: str) -> str:
        try:
            parsed = parse_prompt(prompt)
        except ValueError:
            return "I cannot find the expected sections in this request."
        if parsed.format != "ica" or not parsed.query_text:
            return "The workflows are not in a machine-readable form I can follow."
        try:
            docs = [parse_ica(text) for text in parsed.workflow_texts]
        except Exception:
            return "I was unable to read the workflows."
        if not docs:
            return "There are no candidate workflows to follow."
        trees = [doc.tree for doc in docs]
        label = infer_intent_label(parsed.query_text, docs)
        query = UserQuery(parsed.query_text, intent_label=label)
        trace = evaluate(trees, query, parsed.context)
        if trace.matched is None:
            return "No workflow branch matches this request."
        if parsed.with_cot:
            return synth_cot(trace, trees, query, parsed.context)
        return f"Action: {trace.matched.action_id}"

    def complete(
        self,
        prompt: str,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
        timeout: float = DEFAULT_TIMEOUT,
    ) -> CompletionResult:
        text = _truncate_to_tokens(self._answer(prompt), max_output_tokens)
        # Injected, deterministic latency derived from the prompt size.
        latency = 0.012 + (len(prompt) % 487) * 1e-5
        with self._lock:
            self.latencies.append(latency)
        return CompletionResult(text=text, latency_seconds=latency)


class CorruptingClient(LlmClient):
    """Wraps another client and corrupts a seeded fraction of answers.

    With probability ``p`` the final action id is replaced by a uniformly
    chosen *wrong* id from the prompt's action set (or an out-of-range id
    when the prompt offers only one).  The decision stream is derived from
    (seed, prompt), so results are independent of call order and identical
    between serial and concurrent runs.
    """

    def __init__(self, inner: LlmClient, p: float, seed: int = 0):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must be within [0, 1]")
        self.inner = inner
        self.p = p
        self.seed = seed

    def complete(
        self,
        prompt: str,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
        timeout: float = DEFAULT_TIMEOUT,
    ) -> CompletionResult:
        result = self.inner.complete(prompt, max_output_tokens, timeout)
        digest = sha256(f"{self.seed}:{prompt}".encode()).hexdigest()
        rng = Random(int(digest[:16], 16))
        if rng.random() >= self.p:
            return result
        correct = parse_response(result.text)
        if correct is None:
            return result
        offered = sorted({int(m) for m in _PROMPT_ACTION_ID_RE.findall(prompt)})
        wrong_choices = [i for i in offered if i != correct]
        wrong = rng.choice(wrong_choices) if wrong_choices else correct + 1
        lines = result.text.split("\n")
        for index in range(len(lines) - 1, -1, -1):
            if parse_response(lines[index]) is not None:
                lines[index] = f"Action: {wrong}"
                break
        return CompletionResult(text="\n".join(lines), latency_seconds=result.latency_seconds)


class HttpChatClient(LlmClient):
    """Generic chat-completion HTTP adapter.

    Posts ``{model, messages, max_tokens}`` to the endpoint and reads
    ``choices[0].message.content``; the bearer token comes from the
    environment so credentials never live in config files.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = API_KEY_ENV,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.session = session or requests.Session()

    def complete(
        self,
        prompt: str,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
        timeout: float = DEFAULT_TIMEOUT,
    ) -> CompletionResult:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_output_tokens,
            "temperature": 0,
        }
        started = time.perf_counter()
        try:
            response = self.session.post(
                self.endpoint, json=payload, headers=headers, timeout=timeout
            )
        except requests.RequestException as exc:
            raise TransportError("llm-client", str(exc)) from exc
        latency = time.perf_counter() - started
        if response.status_code != 200:
            raise TransportError(
                "llm-client", f"endpoint returned HTTP {response.status_code}"
            )
        try:
            text = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError("llm-client", f"malformed completion payload: {exc}") from exc
        if estimate_tokens(text) > max_output_tokens:
            text = _truncate_to_tokens(text, max_output_tokens)
        return CompletionResult(text=text, latency_seconds=latency)
