"""Prompt assembly and response parsing for action prediction.

One fixed template is shared by the training-data generator and the online
pipeline, so a model fine-tuned on generated instances sees byte-identical
framing at prediction time.  Candidate workflows are renumbered into a
single global action sequence 1..N for the request (ids restart at 1 per
workflow in the knowledge base, which would be ambiguous across
candidates); the back-map from global id to (workflow, local id) is
retained on the returned plan.

The template is intentionally machine-parseable: section headers are exact,
context values are JSON literals, and the inverse (:func:`parse_prompt`)
feeds the deterministic mock client that replays the interpreter.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import PromptBudgetError
from .lang import IcaDocument, describe_condition, print_ica
from .model import (
    ActionRef,
    ConditionExpr,
    ContextRecord,
    DecisionTree,
    ElseMarker,
    TreeNode,
    UserQuery,
)

HEADER = (
    "Decide which support action to take for the user's request by "
    "following the workflows below."
)
QUERY_SECTION = "## User Query"
CONTEXT_SECTION = "## Context Data"
WORKFLOWS_SECTION = "## Workflows"
INSTRUCTIONS_SECTION = "## Instructions"
EMPTY_CONTEXT = "(none)"
COT_INSTRUCTION = (
    "Check each workflow branch against the query and the context data, "
    "explain which branch matches and why the others do not, then finish "
    "with a line of the form `Action: <id>`."
)
PLAIN_INSTRUCTION = "Reply with a single line of the form `Action: <id>` and nothing else."

DEFAULT_TOKEN_BUDGET = 4096

_ACTION_LINE_RE = re.compile(r"^\s*Action:\s*([1-9][0-9]*)\s*$")


def estimate_tokens(text: str) -> int:
    """Cheap length-based token estimate (~4 characters per token)."""
    return max(1, math.ceil(len(text) / 4))


@dataclass(frozen=True)
class PromptPlan:
    """What went into a prompt, plus the per-request action renumbering."""

    candidate_ids: tuple[str, ...]
    to_global: dict[tuple[str, int], int]
    to_local: dict[int, tuple[str, int]]
    with_cot: bool
    format: str
    estimated_tokens: int


def _renumber(doc: IcaDocument, start: int) -> tuple[DecisionTree, dict[int, int], int]:
    """Replace leaf ids with a global sequence starting at ``start``.

    Returns the renumbered tree, local->global mapping, and the next free
    global id.  Leaves are numbered in pre-order.
    """
    mapping: dict[int, int] = {}
    nodes = dict(doc.tree.nodes)
    next_id = start
    for node in doc.tree.preorder():
        if isinstance(node.payload, ActionRef):
            mapping[node.payload.action_id] = next_id
            nodes[node.node_id] = TreeNode(
                node_id=node.node_id,
                payload=ActionRef(next_id),
                children=(),
                description=node.description,
            )
            next_id += 1
    tree = DecisionTree(workflow_id=doc.workflow_id, nodes=nodes, root=doc.tree.root)
    return tree, mapping, next_id


def _render_ica(doc: IcaDocument, tree: DecisionTree, mapping: dict[int, int]) -> str:
    contents = {}
    for local, global_id in mapping.items():
        content = doc.action_content(local)
        if content is not None:
            contents[global_id] = content
    return print_ica(tree, comment_hints=contents)


def _render_richtext(doc: IcaDocument, tree: DecisionTree, mapping: dict[int, int]) -> str:
    """Outline rendering used by the rich-text baseline arm.

    Shows the original block/description text with full action contents, as
    a nested bullet list rather than executable pseudocode.
    """
    lines = [f"Workflow: {doc.workflow_id}"]

    def emit(node: TreeNode, depth: int) -> None:
        pad = " " * (2 * depth)
        payload = node.payload
        if isinstance(payload, ActionRef):
            content = doc.action_content(mapping_inverse[payload.action_id]) or ""
            collapsed = " ".join(content.split())
            lines.append(f"{pad}- Action {payload.action_id}: {collapsed}")
            return
        if isinstance(payload, ElseMarker):
            text = node.description or "otherwise"
        elif isinstance(payload, ConditionExpr):
            text = node.description or describe_condition(payload)
        else:
            text = node.description
        lines.append(f"{pad}- {text}")
        for child_id in node.children:
            emit(tree.nodes[child_id], depth + 1)

    mapping_inverse = {g: l for l, g in mapping.items()}
    emit(tree.nodes[tree.root], 0)
    return "\n".join(lines) + "\n"


def build_prompt(
    query: UserQuery,
    ctx: ContextRecord,
    candidates: Sequence[IcaDocument],
    with_cot: bool = True,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    format: str = "ica",
) -> tuple[str, PromptPlan]:
    """Assemble the prediction prompt; deterministic for identical inputs.

    Raises :class:`PromptBudgetError` when the estimate exceeds the budget,
    listing per-candidate sizes so oversized workflows are identifiable.
    """
    if not candidates:
        raise ValueError("at least one candidate workflow is required")
    if format not in ("ica", "richtext"):
        raise ValueError(f"unknown prompt format {format!r}")

    to_global: dict[tuple[str, int], int] = {}
    to_local: dict[int, tuple[str, int]] = {}
    rendered: list[str] = []
    candidate_sizes: dict[str, int] = {}
    next_global = 1
    for doc in candidates:
        tree, mapping, next_global = _renumber(doc, next_global)
        for local, global_id in mapping.items():
            to_global[(doc.workflow_id, local)] = global_id
            to_local[global_id] = (doc.workflow_id, local)
        text = (
            _render_ica(doc, tree, mapping)
            if format == "ica"
            else _render_richtext(doc, tree, mapping)
        )
        rendered.append(text.rstrip("\n"))
        candidate_sizes[doc.workflow_id] = estimate_tokens(text)

    context_lines = [
        f"{key}: {json.dumps(value, ensure_ascii=True)}"
        for key, value in sorted(ctx.fields.items())
    ] or [EMPTY_CONTEXT]

    parts = [
        HEADER,
        "",
        QUERY_SECTION,
        query.text,
        "",
        CONTEXT_SECTION,
        *context_lines,
        "",
        WORKFLOWS_SECTION,
        "\n\n".join(rendered),
        "",
        INSTRUCTIONS_SECTION,
        COT_INSTRUCTION if with_cot else PLAIN_INSTRUCTION,
    ]
    prompt = "\n".join(parts) + "\n"

    estimated = estimate_tokens(prompt)
    if estimated > token_budget:
        raise PromptBudgetError(estimated, token_budget, candidate_sizes)

    plan = PromptPlan(
        candidate_ids=tuple(doc.workflow_id for doc in candidates),
        to_global=to_global,
        to_local=to_local,
        with_cot=with_cot,
        format=format,
        estimated_tokens=estimated,
    )
    return prompt, plan


@dataclass(frozen=True)
class ParsedPrompt:
    query_text: str
    context: ContextRecord
    workflow_texts: tuple[str, ...]
    with_cot: bool
    format: str


def parse_prompt(prompt: str) -> ParsedPrompt:
    """Invert :func:`build_prompt`; used by the interpreter-backed mock."""
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in prompt.split("\n"):
        if line.startswith("## "):
            current = sections.setdefault(line, [])
        elif current is not None:
            current.append(line)

    def section(name: str) -> list[str]:
        if name not in sections:
            raise ValueError(f"prompt is missing the {name!r} section")
        lines = sections[name]
        while lines and not lines[-1]:
            lines = lines[:-1]
        return lines

    query_text = "\n".join(section(QUERY_SECTION)).strip()

    fields = {}
    for line in section(CONTEXT_SECTION):
        if not line or line == EMPTY_CONTEXT:
            continue
        key, sep, raw = line.partition(": ")
        if not sep:
            raise ValueError(f"bad context line {line!r}")
        fields[key] = json.loads(raw)

    workflow_lines = section(WORKFLOWS_SECTION)
    texts: list[str] = []
    fmt = "ica"
    block: list[str] = []
    opener = "intent:"
    if any(line.startswith("Workflow: ") for line in workflow_lines):
        fmt = "richtext"
        opener = "Workflow: "
    for line in workflow_lines:
        if line.startswith(opener) and block:
            texts.append("\n".join(block).strip("\n") + "\n")
            block = [line]
        elif line.startswith(opener):
            block = [line]
        elif block:
            block.append(line)
    if block:
        texts.append("\n".join(block).strip("\n") + "\n")

    instructions = "\n".join(section(INSTRUCTIONS_SECTION))
    with_cot = "explain which branch matches" in instructions

    return ParsedPrompt(
        query_text=query_text,
        context=ContextRecord(fields),
        workflow_texts=tuple(texts),
        with_cot=with_cot,
        format=fmt,
    )


def parse_response(text: str) -> int | None:
    """Extract the action id from model output, or None when unparseable.

    The *last* line of the form ``Action: <positive int>`` wins: reasoning
    text may mention ids mid-stream, the final stated action is the answer.
    """
    result = None
    for line in text.split("\n"):
        match = _ACTION_LINE_RE.match(line)
        if match:
            result = int(match.group(1))
    return result
