"""Online action prediction: retrieve, fetch context, prompt, parse, resolve.

The pipeline retrieves candidate workflows for the query, pulls the
context fields those workflows reference from a pluggable provider,
renders the shared prompt template, calls the configured LLM client, and
translates the model's global action id back into (workflow, action id)
through the per-request renumbering map.  Failure modes surface as
statuses on the returned prediction rather than exceptions; transport
errors keep their pipeline stage for diagnosis.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .clients import DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TIMEOUT, LlmClient
from .errors import TransportError
from .lang import IcaDocument
from .model import ActionMap, ConditionExpr, ContextRecord, UserQuery
from .prompts import DEFAULT_TOKEN_BUDGET, build_prompt, parse_response
from .retrieval import IntentIndex, infer_intent_label, retrieve

STATUS_OK = "ok"
STATUS_NO_INTENT_MATCH = "no_intent_match"
STATUS_UNPARSEABLE = "unparseable_response"
STATUS_UNKNOWN_ACTION = "unknown_action_id"


class ContextProvider(Protocol):
    """Fetches the context record for a query.

    ``keys`` lists the context fields referenced by the candidate
    workflows, letting backends fetch only what the decision needs.
    """

    def fetch(self, query_text: str, keys: Sequence[str]) -> ContextRecord:
        ...


class StaticContextProvider:
    """Always returns the same record (used when context rides the request)."""

    def __init__(self, record: ContextRecord | None = None):
        self.record = record or ContextRecord()

    def fetch(self, query_text: str, keys: Sequence[str]) -> ContextRecord:
        return self.record


class FileContextProvider:
    """Record lookup from a JSON file keyed by exact query text.

    The reserved key ``"default"`` is the fallback; a miss on both yields
    an empty record.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            self._records = json.loads(self.path.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise TransportError("context-provider", f"cannot read {self.path}: {exc}") from exc

    def fetch(self, query_text: str, keys: Sequence[str]) -> ContextRecord:
        fields = self._records.get(query_text, self._records.get("default", {}))
        return ContextRecord(dict(fields))


class HttpContextProvider:
    """GET ``endpoint?query=...&keys=a,b`` expecting a flat JSON object."""

    def __init__(self, endpoint: str, session: requests.Session | None = None):
        self.endpoint = endpoint
        self.session = session or requests.Session()

    def fetch(self, query_text: str, keys: Sequence[str]) -> ContextRecord:
        try:
            response = self.session.get(
                self.endpoint,
                params={"query": query_text, "keys": ",".join(keys)},
                timeout=DEFAULT_TIMEOUT,
            )
        except requests.RequestException as exc:
            raise TransportError("context-provider", str(exc)) from exc
        if response.status_code != 200:
            raise TransportError(
                "context-provider", f"endpoint returned HTTP {response.status_code}"
            )
        try:
            return ContextRecord(dict(response.json()))
        except (ValueError, TypeError) as exc:
            raise TransportError("context-provider", f"malformed context payload: {exc}") from exc


def referenced_keys(docs: Sequence[IcaDocument]) -> list[str]:
    """Context field names tested anywhere in the candidate workflows."""
    keys = set()
    for doc in docs:
        for node in doc.tree.nodes.values():
            payload = node.payload
            if isinstance(payload, ConditionExpr) and payload.key:
                keys.add(payload.key)
    return sorted(keys)


@dataclass(frozen=True)
class Prediction:
    status: str
    workflow_id: str | None = None
    action_id: int | None = None          # per-workflow id
    global_action_id: int | None = None   # id as stated by the model
    action_content: str | None = None
    rationale: str = ""
    latency_seconds: float = 0.0          # model call, as reported by the client
    latency_e2e_seconds: float = 0.0      # wall clock around the call
    candidates: tuple[str, ...] = ()
    context: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "workflow_id": self.workflow_id,
            "action_id": self.action_id,
            "global_action_id": self.global_action_id,
            "action_content": self.action_content,
            "rationale": self.rationale,
            "latency_seconds": self.latency_seconds,
            "latency_e2e_seconds": self.latency_e2e_seconds,
            "candidates": list(self.candidates),
            "context": self.context,
        }


def predict_with_candidates(
    query_text: str,
    ctx: ContextRecord,
    candidates: Sequence[IcaDocument],
    action_map: ActionMap,
    client: LlmClient,
    with_cot: bool = True,
    format: str = "ica",
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    timeout: float = DEFAULT_TIMEOUT,
) -> Prediction:
    """Prediction over a fixed candidate list (retrieval already done)."""
    candidate_ids = tuple(doc.workflow_id for doc in candidates)
    inferred = infer_intent_label(query_text, candidates)
    query = UserQuery(query_text, intent_label=inferred)
    prompt, plan = build_prompt(
        query, ctx, candidates, with_cot=with_cot, token_budget=token_budget, format=format
    )

    started = time.perf_counter()
    result = client.complete(prompt, max_output_tokens=max_output_tokens, timeout=timeout)
    e2e = time.perf_counter() - started

    base = dict(
        rationale=result.text,
        latency_seconds=result.latency_seconds,
        latency_e2e_seconds=e2e,
        candidates=candidate_ids,
        context=ctx.to_json_dict(),
    )
    global_id = parse_response(result.text)
    if global_id is None:
        return Prediction(status=STATUS_UNPARSEABLE, **base)
    if global_id not in plan.to_local:
        return Prediction(status=STATUS_UNKNOWN_ACTION, global_action_id=global_id, **base)
    workflow_id, local_id = plan.to_local[global_id]
    content = action_map.get(workflow_id, local_id)
    if content is None:
        return Prediction(
            status=STATUS_UNKNOWN_ACTION,
            workflow_id=workflow_id,
            action_id=local_id,
            global_action_id=global_id,
            **base,
        )
    return Prediction(
        status=STATUS_OK,
        workflow_id=workflow_id,
        action_id=local_id,
        global_action_id=global_id,
        action_content=content,
        **base,
    )


def predict(
    query_text: str,
    context_provider: ContextProvider,
    index: IntentIndex,
    docs: Sequence[IcaDocument],
    action_map: ActionMap,
    client: LlmClient,
    k: int = 3,
    with_cot: bool = True,
    format: str = "ica",
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    timeout: float = DEFAULT_TIMEOUT,
) -> Prediction:
    """Full pipeline: retrieve top-k, fetch context, prompt, parse, resolve.

    With no retrieval hit the prediction is ``no_intent_match`` and no
    client call is made.
    """
    ranking = retrieve(index, query_text, k=k)
    if not ranking:
        return Prediction(status=STATUS_NO_INTENT_MATCH)
    by_id = {doc.workflow_id: doc for doc in docs}
    candidates = [by_id[workflow_id] for workflow_id, _ in ranking]
    keys = referenced_keys(candidates)
    ctx = context_provider.fetch(query_text, keys)
    return predict_with_candidates(
        query_text,
        ctx,
        candidates,
        action_map,
        client,
        with_cot=with_cot,
        format=format,
        token_budget=token_budget,
        max_output_tokens=max_output_tokens,
        timeout=timeout,
    )
