"""Deterministic workflow evaluation with a full branch trace.

Semantics: depth-first, document order, first full root-to-leaf match
wins.  ``else`` branches match when every earlier sibling condition
failed.  A missing context field makes a comparison ``unknown`` rather
than false, and unknown abandons the branch — the distinction is kept in
the trace so callers can tell "needs more context" from "condition
failed".  Every explored branch gets a trace entry: either the first
non-matching node (with the observed value that caused it) or a full
match; the trace is what rationale synthesis explains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from .model import (
    ActionRef,
    ConditionExpr,
    ConditionKind,
    ContextRecord,
    DecisionTree,
    ElseMarker,
    Scalar,
    TreeNode,
    UserQuery,
    scalar_kind,
)

MATCHED = "matched"
FAILED = "failed"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class ConditionOutcome:
    status: str  # matched | failed | unknown
    key: str = ""
    observed: Any = None  # scalar actually seen (None when missing)
    reason: str = ""

    @property
    def matched(self) -> bool:
        return self.status == MATCHED


def condition_matches_present_value(cond: ConditionExpr, value: Scalar) -> bool:
    """Whether a present context value satisfies a (non-intent) condition."""
    kind = cond.kind
    if kind is ConditionKind.EXISTS:
        return True
    if kind is ConditionKind.BOOLEAN_TRUE:
        return scalar_kind(value) == "bool" and bool(value)
    if kind is ConditionKind.EQUALS:
        return scalar_kind(value) == scalar_kind(cond.value) and value == cond.value
    if kind is ConditionKind.NOT_EQUALS:
        return scalar_kind(value) == scalar_kind(cond.value) and value != cond.value
    if kind is ConditionKind.IN_SET:
        return any(
            scalar_kind(value) == scalar_kind(member) and value == member
            for member in cond.value
        )
    if kind is ConditionKind.LESS_THAN:
        return (
            scalar_kind(value) == "number"
            and scalar_kind(cond.value) == "number"
            and value < cond.value
        )
    if kind is ConditionKind.GREATER_THAN:
        return (
            scalar_kind(value) == "number"
            and scalar_kind(cond.value) == "number"
            and value > cond.value
        )
    raise ValueError(f"cannot evaluate condition kind {kind}")


def eval_condition(cond: ConditionExpr, query: UserQuery, ctx: ContextRecord) -> ConditionOutcome:
    """Evaluate one condition; total — never raises on well-formed input."""
    if cond.kind is ConditionKind.INTENT_LABEL:
        if query.intent_label is None:
            return ConditionOutcome(UNKNOWN, key="intent", reason="query intent is unknown")
        if query.intent_label == cond.intent_label:
            return ConditionOutcome(MATCHED, key="intent", observed=query.intent_label)
        return ConditionOutcome(
            FAILED,
            key="intent",
            observed=query.intent_label,
            reason=f"query intent is {query.intent_label!r}, not {cond.intent_label!r}",
        )

    if not ctx.has(cond.key):
        if cond.kind is ConditionKind.EXISTS:
            return ConditionOutcome(FAILED, key=cond.key, reason=f"`{cond.key}` is absent")
        return ConditionOutcome(UNKNOWN, key=cond.key, reason=f"`{cond.key}` is missing")

    observed = ctx.get(cond.key)
    if condition_matches_present_value(cond, observed):
        return ConditionOutcome(MATCHED, key=cond.key, observed=observed)

    wanted_kind = None
    if cond.kind in (ConditionKind.EQUALS, ConditionKind.NOT_EQUALS):
        wanted_kind = scalar_kind(cond.value)
    elif cond.kind in (ConditionKind.LESS_THAN, ConditionKind.GREATER_THAN):
        wanted_kind = "number"
    elif cond.kind is ConditionKind.BOOLEAN_TRUE:
        wanted_kind = "bool"
    if wanted_kind is not None and scalar_kind(observed) != wanted_kind:
        reason = f"`{cond.key}` has type {scalar_kind(observed)}, expected {wanted_kind}"
    else:
        reason = f"`{cond.key}` is {observed!r}"
    return ConditionOutcome(FAILED, key=cond.key, observed=observed, reason=reason)


@dataclass(frozen=True)
class BranchOutcome:
    """One explored branch: where it stopped, or a complete match."""

    workflow_id: str
    status: str  # matched | failed | unknown
    node_id: str  # leaf for matches, the first non-matching node otherwise
    path: tuple[str, ...]  # node ids from root to node_id inclusive
    key: str = ""
    observed: Any = None
    reason: str = ""


@dataclass(frozen=True)
class MatchedAction:
    workflow_id: str
    action_id: int
    path: tuple[str, ...]


@dataclass
class EvalTrace:
    matched: MatchedAction | None = None
    branches: list[BranchOutcome] = field(default_factory=list)

    def matched_branches(self) -> list[BranchOutcome]:
        return [b for b in self.branches if b.status == MATCHED]

    def to_json_dict(self) -> dict:
        return {
            "matched": (
                {
                    "workflow_id": self.matched.workflow_id,
                    "action_id": self.matched.action_id,
                    "path": list(self.matched.path),
                }
                if self.matched
                else None
            ),
            "branches": [
                {
                    "workflow_id": b.workflow_id,
                    "status": b.status,
                    "node_id": b.node_id,
                    "path": list(b.path),
                    "key": b.key,
                    "observed": b.observed,
                    "reason": b.reason,
                }
                for b in self.branches
            ],
        }


def _node_outcome(
    tree: DecisionTree,
    node: TreeNode,
    earlier_siblings: Sequence[TreeNode],
    query: UserQuery,
    ctx: ContextRecord,
    memo: dict[str, ConditionOutcome],
) -> ConditionOutcome:
    """Outcome of one node, honoring else semantics against its siblings."""
    if node.node_id in memo:
        return memo[node.node_id]
    payload = node.payload
    if isinstance(payload, (ActionRef,)) or node.is_leaf:
        outcome = ConditionOutcome(MATCHED)
    elif isinstance(payload, ConditionExpr):
        outcome = eval_condition(payload, query, ctx)
    elif isinstance(payload, ElseMarker):
        outcome = _else_outcome(tree, earlier_siblings, query, ctx, memo)
    else:
        raise ValueError(f"cannot evaluate payload {payload!r}")
    memo[node.node_id] = outcome
    return outcome


def _else_outcome(
    tree: DecisionTree,
    earlier_siblings: Sequence[TreeNode],
    query: UserQuery,
    ctx: ContextRecord,
    memo: dict[str, ConditionOutcome],
) -> ConditionOutcome:
    first_unknown: ConditionOutcome | None = None
    for index, sibling in enumerate(earlier_siblings):
        outcome = _node_outcome(tree, sibling, earlier_siblings[:index], query, ctx, memo)
        if outcome.status == MATCHED:
            return ConditionOutcome(
                FAILED, key="", reason="an earlier sibling branch matched"
            )
        if outcome.status == UNKNOWN and first_unknown is None:
            first_unknown = outcome
    if first_unknown is not None:
        return ConditionOutcome(
            UNKNOWN,
            key=first_unknown.key,
            reason=f"cannot rule out an earlier sibling: {first_unknown.reason}",
        )
    return ConditionOutcome(MATCHED)


def evaluate(
    trees: Sequence[DecisionTree], query: UserQuery, ctx: ContextRecord
) -> EvalTrace:
    """Evaluate workflows in order; explore every branch for the trace.

    The selected action is the first fully matched root-to-leaf path in
    document order, but exploration continues so the trace can explain all
    sibling branches (later full matches appear as ``matched`` branch
    outcomes without being selected).
    """
    trace = EvalTrace()

    for tree in trees:
        memo: dict[str, ConditionOutcome] = {}

        def explore(node: TreeNode, path: tuple[str, ...], earlier: Sequence[TreeNode]) -> None:
            outcome = _node_outcome(tree, node, earlier, query, ctx, memo)
            full_path = path + (node.node_id,)
            if outcome.status != MATCHED:
                trace.branches.append(
                    BranchOutcome(
                        workflow_id=tree.workflow_id,
                        status=outcome.status,
                        node_id=node.node_id,
                        path=full_path,
                        key=outcome.key,
                        observed=outcome.observed,
                        reason=outcome.reason,
                    )
                )
                return
            if node.is_leaf:
                trace.branches.append(
                    BranchOutcome(
                        workflow_id=tree.workflow_id,
                        status=MATCHED,
                        node_id=node.node_id,
                        path=full_path,
                    )
                )
                if trace.matched is None and isinstance(node.payload, ActionRef):
                    trace.matched = MatchedAction(
                        workflow_id=tree.workflow_id,
                        action_id=node.payload.action_id,
                        path=full_path,
                    )
                return
            children = tree.children(node.node_id)
            for index, child in enumerate(children):
                explore(child, full_path, children[:index])

        explore(tree.nodes[tree.root], (), ())

    return trace
