"""Core domain model: conditions, decision trees, action maps, runtime records.

A workflow is a rooted tree whose root tests the user's intent, whose
internal nodes test context fields, and whose leaves name the action to
take.  Everything here is immutable after construction and JSON
serializable through a canonical form with stable key ordering, which is
the interchange format between pipeline stages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Union

from .errors import ActionNotFoundError, TreeStructureError

Scalar = Union[str, int, float, bool]


def scalar_kind(value: Scalar) -> str:
    """Type tag of a scalar: 'text', 'number' or 'bool'.

    bool is checked before int because Python bools are ints.
    """
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "text"
    raise TypeError(f"not a scalar: {value!r}")


def scalars_equal(a: Scalar, b: Scalar) -> bool:
    """Typed equality: kinds must agree, numbers compare numerically."""
    return scalar_kind(a) == scalar_kind(b) and a == b


def _scalar_sort_key(value: Scalar):
    kind = scalar_kind(value)
    if kind == "text":
        return (0, value, "")
    if kind == "number":
        return (1, value, "")
    return (2, int(value), "")


class ConditionKind(str, Enum):
    INTENT_LABEL = "intent-label"
    EQUALS = "equals"
    NOT_EQUALS = "not-equals"
    LESS_THAN = "less-than"
    GREATER_THAN = "greater-than"
    IN_SET = "in-set"
    EXISTS = "exists"
    BOOLEAN_TRUE = "boolean-true"


#: Kinds that carry exactly one comparison scalar.
COMPARISON_KINDS = frozenset(
    {
        ConditionKind.EQUALS,
        ConditionKind.NOT_EQUALS,
        ConditionKind.LESS_THAN,
        ConditionKind.GREATER_THAN,
    }
)


@dataclass(frozen=True)
class ConditionExpr:
    """One typed predicate over the query intent or a context field.

    ``value`` holds a single scalar for comparison kinds and a canonical
    (sorted, de-duplicated) tuple of scalars for ``in-set``.
    """

    kind: ConditionKind
    key: str = ""
    value: Any = None
    intent_label: str = ""

    def __post_init__(self):
        if self.kind is ConditionKind.IN_SET and self.value is not None:
            canonical = tuple(
                sorted(set(self.value), key=_scalar_sort_key)
            )
            object.__setattr__(self, "value", canonical)

    def check(self) -> list[str]:
        """Return field-consistency problems (empty when well formed)."""
        problems = []
        if self.kind is ConditionKind.INTENT_LABEL:
            if not self.intent_label:
                problems.append("intent-label condition needs a non-empty label")
            if self.key:
                problems.append("intent-label condition must not carry a key")
        else:
            if not self.key:
                problems.append(f"{self.kind.value} condition needs a non-empty key")
            if self.intent_label:
                problems.append(f"{self.kind.value} condition must not carry an intent label")
        if self.kind in COMPARISON_KINDS:
            try:
                scalar_kind(self.value)
            except TypeError:
                problems.append(f"{self.kind.value} condition needs exactly one scalar value")
        elif self.kind is ConditionKind.IN_SET:
            if not isinstance(self.value, tuple) or not self.value:
                problems.append("in-set condition needs a non-empty value set")
        elif self.value is not None:
            problems.append(f"{self.kind.value} condition must not carry a value")
        return problems


@dataclass(frozen=True)
class ElseMarker:
    """Branch taken when every earlier sibling condition failed.

    Kept as an explicit marker (rather than a materialized negation) so the
    printed pseudocode matches what the author wrote.
    """


@dataclass(frozen=True)
class ActionRef:
    """Leaf payload: the per-workflow action id (1..K)."""

    action_id: int


@dataclass(frozen=True)
class PendingAction:
    """Leaf payload before id assignment: the raw action content text."""

    text: str


Payload = Union[ConditionExpr, ElseMarker, ActionRef, PendingAction]


@dataclass(frozen=True)
class TreeNode:
    node_id: str
    payload: Payload
    children: tuple[str, ...] = ()
    description: str = ""

    @property
    def is_leaf(self) -> bool:
        return isinstance(self.payload, (ActionRef, PendingAction))


@dataclass(frozen=True)
class DecisionTree:
    """A rooted workflow tree; nodes are addressed by id."""

    workflow_id: str
    nodes: dict[str, TreeNode] = field(default_factory=dict)
    root: str = ""

    def node(self, node_id: str) -> TreeNode:
        return self.nodes[node_id]

    def children(self, node_id: str) -> list[TreeNode]:
        return [self.nodes[c] for c in self.nodes[node_id].children]

    def preorder(self) -> Iterator[TreeNode]:
        """Depth-first walk, children in stored order, starting at the root."""
        stack = [self.root]
        seen = set()
        while stack:
            node_id = stack.pop()
            if node_id in seen or node_id not in self.nodes:
                continue
            seen.add(node_id)
            node = self.nodes[node_id]
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.preorder() if n.is_leaf]

    def parent_of(self, node_id: str) -> str | None:
        for node in self.nodes.values():
            if node_id in node.children:
                return node.node_id
        return None

    def intent_label(self) -> str:
        payload = self.nodes[self.root].payload
        if isinstance(payload, ConditionExpr) and payload.kind is ConditionKind.INTENT_LABEL:
            return payload.intent_label
        return ""


class ActionMap:
    """Registry of (workflow_id, action_id) -> full action content."""

    def __init__(self, entries: dict[tuple[str, int], str] | None = None):
        self._entries: dict[tuple[str, int], str] = dict(entries or {})

    @property
    def entries(self) -> dict[tuple[str, int], str]:
        return dict(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, int]) -> bool:
        return key in self._entries

    def get(self, workflow_id: str, action_id: int) -> str | None:
        return self._entries.get((workflow_id, action_id))

    def add(self, workflow_id: str, action_id: int, content: str) -> None:
        key = (workflow_id, action_id)
        if key in self._entries and self._entries[key] != content:
            raise ValueError(f"conflicting content for {key}")
        self._entries[key] = content

    def merge(self, other: "ActionMap") -> None:
        for (wf, aid), content in other._entries.items():
            self.add(wf, aid, content)

    def for_workflow(self, workflow_id: str) -> dict[int, str]:
        return {
            aid: content
            for (wf, aid), content in sorted(self._entries.items())
            if wf == workflow_id
        }

    def to_json_dict(self) -> dict:
        workflows: dict[str, dict[str, str]] = {}
        for (wf, aid), content in sorted(self._entries.items()):
            workflows.setdefault(wf, {})[str(aid)] = content
        return {"workflows": workflows}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ActionMap":
        entries = {}
        for wf, actions in data.get("workflows", {}).items():
            for aid, content in actions.items():
                entries[(wf, int(aid))] = content
        return cls(entries)


@dataclass(frozen=True)
class ContextRecord:
    """Flat map of context field name -> scalar; may be empty."""

    fields: dict[str, Scalar] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.fields.items():
            scalar_kind(value)  # raises on non-scalars
            if not isinstance(name, str):
                raise TypeError("field names must be strings")

    def get(self, key: str):
        return self.fields.get(key)

    def has(self, key: str) -> bool:
        return key in self.fields

    def with_field(self, key: str, value: Scalar) -> "ContextRecord":
        merged = dict(self.fields)
        merged[key] = value
        return ContextRecord(merged)

    def to_json_dict(self) -> dict:
        return dict(sorted(self.fields.items()))

    @classmethod
    def from_json_dict(cls, data: dict) -> "ContextRecord":
        return cls(dict(data))


@dataclass(frozen=True)
class UserQuery:
    text: str
    intent_label: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("query text must be non-empty")

    def with_intent(self, intent_label: str | None) -> "UserQuery":
        return UserQuery(self.text, intent_label)

    def to_json_dict(self) -> dict:
        data: dict[str, Any] = {"text": self.text}
        if self.intent_label is not None:
            data["intent_label"] = self.intent_label
        return data

    @classmethod
    def from_json_dict(cls, data: dict) -> "UserQuery":
        return cls(text=data["text"], intent_label=data.get("intent_label"))


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    node_id: str = ""

    def __str__(self):
        where = f" [{self.node_id}]" if self.node_id else ""
        return f"{self.code}: {self.message}{where}"


def validate_tree(tree: DecisionTree, action_map: ActionMap | None = None) -> list[Violation]:
    """Check every structural invariant; an empty list means the tree is valid.

    Violations are data, not exceptions: callers that require validity wrap
    the result in :class:`TreeStructureError` via :func:`require_valid`.
    """
    violations: list[Violation] = []

    if tree.root not in tree.nodes:
        violations.append(Violation("missing-root", f"root id {tree.root!r} not in nodes"))
        return violations

    root = tree.nodes[tree.root]
    root_payload = root.payload
    if not (
        isinstance(root_payload, ConditionExpr)
        and root_payload.kind is ConditionKind.INTENT_LABEL
    ):
        violations.append(
            Violation("bad-root", "root must be an intent condition", tree.root)
        )

    parents: dict[str, str] = {}
    for node in tree.nodes.values():
        for child_id in node.children:
            if child_id not in tree.nodes:
                violations.append(
                    Violation("unknown-child", f"child {child_id!r} does not exist", node.node_id)
                )
                continue
            if child_id in parents:
                violations.append(
                    Violation("multiple-parents", f"{child_id!r} has more than one parent", child_id)
                )
            parents[child_id] = node.node_id
    if tree.root in parents:
        violations.append(Violation("root-has-parent", "root must not be a child", tree.root))

    # Reachability and cycle detection in one walk.
    reached: set[str] = set()
    stack = [tree.root]
    while stack:
        node_id = stack.pop()
        if node_id in reached:
            violations.append(Violation("cycle", "node reached twice from root", node_id))
            continue
        reached.add(node_id)
        stack.extend(c for c in tree.nodes[node_id].children if c in tree.nodes)
    for node_id in tree.nodes:
        if node_id not in reached:
            violations.append(Violation("unreachable", "node not reachable from root", node_id))

    action_ids: list[int] = []
    leaf_count = 0
    for node in tree.nodes.values():
        payload = node.payload
        if isinstance(payload, (ActionRef, PendingAction)):
            leaf_count += 1
            if node.children:
                violations.append(
                    Violation("leaf-with-children", "action node must be a leaf", node.node_id)
                )
            if isinstance(payload, ActionRef):
                if payload.action_id < 1:
                    violations.append(
                        Violation("bad-action-id", "action ids must be positive", node.node_id)
                    )
                action_ids.append(payload.action_id)
                if action_map is not None and (tree.workflow_id, payload.action_id) not in action_map:
                    violations.append(
                        Violation(
                            "unresolvable-action",
                            f"action {payload.action_id} missing from action map",
                            node.node_id,
                        )
                    )
        elif isinstance(payload, (ConditionExpr, ElseMarker)):
            if not node.children:
                violations.append(
                    Violation("childless-internal", "condition node needs at least one child", node.node_id)
                )
            if isinstance(payload, ConditionExpr):
                for problem in payload.check():
                    violations.append(Violation("bad-condition", problem, node.node_id))
                if (
                    payload.kind is ConditionKind.INTENT_LABEL
                    and node.node_id != tree.root
                    and node.node_id in reached
                ):
                    violations.append(
                        Violation("intent-below-root", "intent condition only allowed at root", node.node_id)
                    )
        else:
            violations.append(Violation("bad-payload", f"unknown payload {payload!r}", node.node_id))

    # else placement: needs at least one earlier plain-condition sibling, and
    # at most one else per sibling group (otherwise the printed form would not
    # re-parse).
    for node in tree.nodes.values():
        seen_condition = False
        seen_else = False
        for child in (tree.nodes.get(c) for c in node.children):
            if child is None:
                continue
            if isinstance(child.payload, ElseMarker):
                if not seen_condition:
                    violations.append(
                        Violation("dangling-else", "else has no earlier condition sibling", child.node_id)
                    )
                if seen_else:
                    violations.append(
                        Violation("duplicate-else", "second else in one sibling group", child.node_id)
                    )
                seen_else = True
            elif isinstance(child.payload, ConditionExpr):
                seen_condition = True

    if leaf_count == 0:
        violations.append(Violation("no-actions", "tree has no action leaves"))

    duplicates = sorted({a for a in action_ids if action_ids.count(a) > 1})
    if duplicates:
        violations.append(
            Violation("duplicate-action-id", f"duplicate action id(s) {duplicates}")
        )

    return violations


def check_workflow_numbering(tree: DecisionTree) -> list[Violation]:
    """Knowledge-base numbering rule: leaf ids are exactly 1..K, no gaps.

    Kept separate from :func:`validate_tree` because per-request prompt
    renumbering legitimately produces trees with offset id ranges.
    """
    ids = sorted(
        n.payload.action_id
        for n in tree.nodes.values()
        if isinstance(n.payload, ActionRef)
    )
    if ids != list(range(1, len(ids) + 1)):
        return [
            Violation(
                "action-id-gap",
                f"workflow action ids {ids} are not the contiguous range 1..{len(ids)}",
            )
        ]
    return []


def require_valid(tree: DecisionTree, action_map: ActionMap | None = None) -> None:
    violations = validate_tree(tree, action_map)
    if violations:
        raise TreeStructureError(violations)


# ---------------------------------------------------------------------------
# Action id assignment and resolution


def assign_action_ids(tree: DecisionTree) -> tuple[DecisionTree, ActionMap]:
    """Replace PendingAction leaves with ActionRefs numbered 1..K in pre-order.

    Ids identify leaf positions, not contents: identical texts at different
    leaves receive distinct ids.  Numbering follows the reading order of the
    printed pseudocode, so it is stable under pretty-printing.
    """
    pre_check = [
        v
        for v in validate_tree(tree)
        if v.code not in ("no-actions",)
    ]
    if any(isinstance(n.payload, ActionRef) for n in tree.nodes.values()):
        pre_check.append(
            Violation("already-numbered", "leaves must carry raw action text, not ids")
        )
    if pre_check:
        raise TreeStructureError(pre_check)

    entries: dict[tuple[str, int], str] = {}
    nodes = dict(tree.nodes)
    next_id = 1
    for node in tree.preorder():
        if isinstance(node.payload, PendingAction):
            entries[(tree.workflow_id, next_id)] = node.payload.text
            nodes[node.node_id] = TreeNode(
                node_id=node.node_id,
                payload=ActionRef(next_id),
                children=(),
                description=node.description,
            )
            next_id += 1
    if next_id == 1:
        raise TreeStructureError([Violation("no-actions", "tree has no action leaves")])
    numbered = DecisionTree(workflow_id=tree.workflow_id, nodes=nodes, root=tree.root)
    require_valid(numbered)
    return numbered, ActionMap(entries)


def resolve_action(action_map: ActionMap, workflow_id: str, action_id: int) -> str:
    """Look up the full content for an action id; raise if the id is unknown.

    A miss usually means a model hallucinated an id, so the error carries
    both keys for diagnostics.
    """
    content = action_map.get(workflow_id, action_id)
    if content is None:
        raise ActionNotFoundError(workflow_id, action_id)
    return content


# ---------------------------------------------------------------------------
# Structural equality and canonical JSON

def _payload_fingerprint(payload: Payload):
    if isinstance(payload, ConditionExpr):
        return ("condition", payload.kind.value, payload.key, payload.value, payload.intent_label)
    if isinstance(payload, ElseMarker):
        return ("else",)
    if isinstance(payload, ActionRef):
        return ("action", payload.action_id)
    return ("pending-action", payload.text)


def _shape(tree: DecisionTree, node_id: str):
    node = tree.nodes[node_id]
    return (
        _payload_fingerprint(node.payload),
        node.description,
        tuple(_shape(tree, c) for c in node.children),
    )


def trees_equal(a: DecisionTree, b: DecisionTree) -> bool:
    """Structural equality: payloads, descriptions and child order.

    Node ids are internal handles and do not participate; workflow ids are
    compared only when both are set.
    """
    if a.workflow_id and b.workflow_id and a.workflow_id != b.workflow_id:
        return False
    if (a.root in a.nodes) != (b.root in b.nodes):
        return False
    if a.root not in a.nodes:
        return True
    return _shape(a, a.root) == _shape(b, b.root)


def payload_to_json(payload: Payload) -> dict:
    if isinstance(payload, ConditionExpr):
        data: dict[str, Any] = {"type": "condition", "kind": payload.kind.value}
        if payload.kind is ConditionKind.INTENT_LABEL:
            data["intent_label"] = payload.intent_label
        else:
            data["key"] = payload.key
        if payload.kind in COMPARISON_KINDS:
            data["value"] = payload.value
        elif payload.kind is ConditionKind.IN_SET:
            data["value"] = list(payload.value)
        return data
    if isinstance(payload, ElseMarker):
        return {"type": "else"}
    if isinstance(payload, ActionRef):
        return {"type": "action", "action_id": payload.action_id}
    return {"type": "pending-action", "text": payload.text}


def payload_from_json(data: dict) -> Payload:
    kind = data["type"]
    if kind == "condition":
        cond_kind = ConditionKind(data["kind"])
        value = data.get("value")
        if cond_kind is ConditionKind.IN_SET and value is not None:
            value = tuple(value)
        return ConditionExpr(
            kind=cond_kind,
            key=data.get("key", ""),
            value=value,
            intent_label=data.get("intent_label", ""),
        )
    if kind == "else":
        return ElseMarker()
    if kind == "action":
        return ActionRef(int(data["action_id"]))
    if kind == "pending-action":
        return PendingAction(data["text"])
    raise ValueError(f"unknown payload type {kind!r}")


def tree_to_json_dict(tree: DecisionTree) -> dict:
    return {
        "workflow_id": tree.workflow_id,
        "root": tree.root,
        "nodes": {
            node_id: {
                "payload": payload_to_json(node.payload),
                "children": list(node.children),
                "description": node.description,
            }
            for node_id, node in sorted(tree.nodes.items())
        },
    }


def tree_from_json_dict(data: dict) -> DecisionTree:
    nodes = {
        node_id: TreeNode(
            node_id=node_id,
            payload=payload_from_json(raw["payload"]),
            children=tuple(raw.get("children", ())),
            description=raw.get("description", ""),
        )
        for node_id, raw in data["nodes"].items()
    }
    return DecisionTree(workflow_id=data["workflow_id"], nodes=nodes, root=data["root"])


def canonical_json(data) -> str:
    """Stable serialization used for files and fixtures: sorted keys, LF."""
    return json.dumps(data, sort_keys=True, ensure_ascii=True, indent=2) + "\n"


def compact_json(data) -> str:
    """Stable single-line serialization used for JSONL records."""
    return json.dumps(data, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Tree construction helper


class TreeBuilder:
    """Incremental builder that hands out sequential node ids."""

    def __init__(self, workflow_id: str):
        self.workflow_id = workflow_id
        self._nodes: dict[str, TreeNode] = {}
        self._children: dict[str, list[str]] = {}
        self._root: str | None = None
        self._count = 0

    def add(self, payload: Payload, parent: str | None = None, description: str = "") -> str:
        self._count += 1
        node_id = f"n{self._count}"
        self._nodes[node_id] = TreeNode(node_id=node_id, payload=payload, description=description)
        self._children[node_id] = []
        if parent is None:
            if self._root is not None:
                raise ValueError("root already set")
            self._root = node_id
        else:
            self._children[parent].append(node_id)
        return node_id

    def insert(self, payload: Payload, parent: str, index: int, description: str = "") -> str:
        """Like add() but splices the child at a position among its siblings."""
        node_id = self.add(payload, parent=parent, description=description)
        self._children[parent].remove(node_id)
        self._children[parent].insert(index, node_id)
        return node_id

    def children_of(self, node_id: str) -> list[str]:
        return list(self._children[node_id])

    def build(self) -> DecisionTree:
        if self._root is None:
            raise ValueError("empty tree")
        nodes = {
            node_id: TreeNode(
                node_id=node_id,
                payload=node.payload,
                children=tuple(self._children[node_id]),
                description=node.description,
            )
            for node_id, node in self._nodes.items()
        }
        return DecisionTree(workflow_id=self.workflow_id, nodes=nodes, root=self._root)
