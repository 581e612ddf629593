"""Sampling pools for the training-data generator.

Two sources drive synthesis: a pool of intent and context conditions (in a
real deployment, mined from the business knowledge base) and a pool of
(query, context) pairs (historical queries and API returns, anonymized).
This repo ships synthetic fixture pools only; the loader validates the
cross-references the generator relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import GenerationError
from .model import ConditionExpr, ConditionKind, ContextRecord, Scalar

CONDITIONS_FILE = "conditions.json"
QUERY_CONTEXT_FILE = "query_context.json"
ACTION_TEMPLATES_FILE = "action_templates.json"

DEFAULT_ACTION_TEMPLATES = (
    "Offer the guest a goodwill credit of {amount} USD.",
    "Escalate the case to the specialist queue with reference {code}.",
    "Send the standard follow-up message and close the case after {days} days.",
    "Apply a fee waiver of {amount} USD to the upcoming invoice.",
    "Schedule a callback within {days} business days.",
    "Issue refund {code} to the original payment method.",
)


@dataclass(frozen=True)
class PoolIntent:
    label: str
    description: str
    templates: tuple[str, ...]


@dataclass(frozen=True)
class PoolCondition:
    condition: ConditionExpr
    description: str


@dataclass(frozen=True)
class QueryContextSample:
    query: str
    intent_label: str
    context: ContextRecord


@dataclass(frozen=True)
class Pools:
    intents: tuple[PoolIntent, ...]
    conditions: tuple[PoolCondition, ...]
    records: tuple[QueryContextSample, ...]
    action_templates: tuple[str, ...] = DEFAULT_ACTION_TEMPLATES

    def intent_by_label(self, label: str) -> PoolIntent:
        for intent in self.intents:
            if intent.label == label:
                return intent
        raise GenerationError(f"no pool intent labeled {label!r}")

    def validate(self) -> list[str]:
        """Cross-reference problems; generation requires an empty list."""
        problems = []
        if not self.intents:
            problems.append("condition pool has no intents")
        if not self.records:
            problems.append("query/context pool is empty")
        if not self.action_templates:
            problems.append("action template pool is empty")
        labels = {intent.label for intent in self.intents}
        for intent in self.intents:
            if not intent.templates:
                problems.append(f"intent {intent.label!r} has no query templates")
        record_keys = set()
        for record in self.records:
            record_keys.update(record.context.fields)
            if not record.context.fields:
                problems.append(f"record {record.query!r} has an empty context")
            if record.intent_label not in labels:
                problems.append(
                    f"record {record.query!r} names unknown intent {record.intent_label!r}"
                )
            else:
                intent = self.intent_by_label(record.intent_label)
                if record.query not in intent.templates:
                    problems.append(
                        f"record query {record.query!r} is not a template of "
                        f"intent {record.intent_label!r}"
                    )
        for entry in self.conditions:
            issues = entry.condition.check()
            if issues:
                problems.append(f"bad pool condition {entry.description!r}: {issues[0]}")
            elif entry.condition.kind is ConditionKind.INTENT_LABEL:
                problems.append("intent conditions belong in the intents list")
            elif entry.condition.key not in record_keys:
                problems.append(
                    f"condition key {entry.condition.key!r} appears in no pool record"
                )
        if not self.conditions:
            problems.append("condition pool has no context conditions")
        return problems


def condition_from_json(data: dict) -> PoolCondition:
    kind = ConditionKind(data["kind"])
    value: Scalar | tuple | None = data.get("value")
    if kind is ConditionKind.IN_SET and value is not None:
        value = tuple(value)
    return PoolCondition(
        condition=ConditionExpr(kind=kind, key=data.get("key", ""), value=value),
        description=data["description"],
    )


def condition_to_json(entry: PoolCondition) -> dict:
    cond = entry.condition
    data: dict = {"kind": cond.kind.value, "key": cond.key, "description": entry.description}
    if cond.kind is ConditionKind.IN_SET:
        data["value"] = list(cond.value)
    elif cond.value is not None:
        data["value"] = cond.value
    return data


def load_pools(directory: str | Path) -> Pools:
    """Load and validate the three pool files; templates file is optional."""
    directory = Path(directory)
    conditions_data = json.loads((directory / CONDITIONS_FILE).read_text("utf-8"))
    query_data = json.loads((directory / QUERY_CONTEXT_FILE).read_text("utf-8"))

    intents = tuple(
        PoolIntent(
            label=item["label"],
            description=item["description"],
            templates=tuple(item["templates"]),
        )
        for item in conditions_data["intents"]
    )
    conditions = tuple(condition_from_json(item) for item in conditions_data["conditions"])
    records = tuple(
        QueryContextSample(
            query=item["query"],
            intent_label=item["intent_label"],
            context=ContextRecord(item["context"]),
        )
        for item in query_data["records"]
    )

    templates = DEFAULT_ACTION_TEMPLATES
    templates_path = directory / ACTION_TEMPLATES_FILE
    if templates_path.exists():
        data = json.loads(templates_path.read_text("utf-8"))
        templates = tuple(data["templates"])

    pools = Pools(
        intents=intents, conditions=conditions, records=records, action_templates=templates
    )
    problems = pools.validate()
    if problems:
        raise GenerationError("invalid pools: " + "; ".join(problems))
    return pools
