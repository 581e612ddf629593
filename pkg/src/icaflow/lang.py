"""The workflow pseudocode grammar: parse, print, and lint.

The concrete syntax is line oriented; 2-space indentation encodes tree
depth.  Statement forms:

    intent: <label> -- <description>
    if <key> <test> -- <description>
    else -- <description>
    then do Action <n>  # first 60 chars of the action content

where <test> is one of ``== v``, ``!= v``, ``< v``, ``> v``, ``in {v, ...}``,
``exists``, or empty (bare key: field must be boolean true).  Bare values
lex as numbers or ``true``/``false``; anything else is text, quoted only
when it would otherwise be ambiguous.  Full-line comments start with ``#``.
The full grammar lives in docs/grammar.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import IcaParseError, IcaPrintError
from .model import (
    ActionMap,
    ActionRef,
    ConditionExpr,
    ConditionKind,
    DecisionTree,
    ElseMarker,
    PendingAction,
    Scalar,
    TreeBuilder,
    TreeNode,
    require_valid,
    scalar_kind,
    validate_tree,
)

INDENT_UNIT = 2
COMMENT_WIDTH = 60

_INT_RE = re.compile(r"^-?\d+$")
_FLOAT_RE = re.compile(r"^-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?$")
_THEN_DO_RE = re.compile(r"^then\s+do\s+Action\s+(\S+)\s*(?:#\s?(.*))?$")
_NEEDS_QUOTE_CHARS = set('"{},\\\n\t\r')


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    severity: str  # "error" | "warning"
    message: str

    def __str__(self):
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass
class IcaDocument:
    """A parsed workflow: pseudocode text plus its tree and action contents."""

    workflow_id: str
    source_text: str
    tree: DecisionTree
    action_map: ActionMap = field(default_factory=ActionMap)
    comment_hints: dict[int, str] = field(default_factory=dict)

    def intent_label(self) -> str:
        return self.tree.intent_label()

    def action_content(self, action_id: int) -> str | None:
        content = self.action_map.get(self.workflow_id, action_id)
        if content is None:
            content = self.comment_hints.get(action_id)
        return content


# ---------------------------------------------------------------------------
# Value literals


def parse_scalar_literal(text: str) -> Scalar:
    """Lex a bare (unquoted) literal: number, boolean, or text."""
    if _INT_RE.match(text):
        return int(text)
    if _FLOAT_RE.match(text) and any(c in text for c in ".eE"):
        return float(text)
    if text == "true":
        return True
    if text == "false":
        return False
    return text


def _read_quoted(text: str, start: int) -> tuple[str, int] | None:
    """Read a quoted string beginning at text[start] == '\"'.

    Returns (value, index just past the closing quote), or None when
    unterminated.
    """
    out = []
    i = start + 1
    escapes = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text) and text[i + 1] in escapes:
            out.append(escapes[text[i + 1]])
            i += 2
        elif c == '"':
            return "".join(out), i + 1
        else:
            out.append(c)
            i += 1
    return None


def render_scalar(value: Scalar, bare: bool = False) -> str:
    """Render a scalar as a source literal.

    With ``bare`` the raw surface form is returned without quoting
    (used in prose such as rationale lines), otherwise text that would
    lex as something else is quoted.
    """
    kind = scalar_kind(value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "number":
        if isinstance(value, float) and (value != value or value in (float("inf"), float("-inf"))):
            raise IcaPrintError(f"non-finite number {value!r} is not printable")
        return repr(value) if isinstance(value, float) else str(value)
    if bare:
        return value
    if _text_needs_quoting(value):
        escaped = (
            value.replace("\\", "\\\\")
            .replace('"', '\\"')
            .replace("\n", "\\n")
            .replace("\t", "\\t")
            .replace("\r", "\\r")
        )
        return f'"{escaped}"'
    return value


def _text_needs_quoting(text: str) -> bool:
    if text == "" or text != text.strip():
        return True
    if text in ("true", "false") or _INT_RE.match(text) or _FLOAT_RE.match(text):
        return True
    if " -- " in text:
        return True
    return any(c in _NEEDS_QUOTE_CHARS for c in text)


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str, workflow_id: str | None):
        self.lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
        self.workflow_id = workflow_id
        self.diagnostics: list[ParseDiagnostic] = []
        self.hints: dict[int, str] = {}

    def error(self, line_no: int, column: int, message: str) -> None:
        self.diagnostics.append(ParseDiagnostic(line_no, max(column, 1), "error", message))

    def run(self) -> IcaDocument | None:
        builder: TreeBuilder | None = None
        # stack of (depth, node_id, is_leaf); root intent sits at depth 0
        stack: list[tuple[int, str, bool]] = []
        node_lines: dict[str, int] = {}
        # per-parent flags for else placement
        group_state: dict[str, dict[str, bool]] = {}

        for idx, raw in enumerate(self.lines, start=1):
            line = raw.rstrip()
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            indent = len(line) - len(line.lstrip(" "))
            if "\t" in line[:indent + 1] or line.lstrip(" ").startswith("\t"):
                self.error(idx, 1, "tab characters are not allowed in indentation")
                continue
            if indent % INDENT_UNIT != 0:
                self.error(idx, 1, f"indentation must be a multiple of {INDENT_UNIT} spaces")
                continue
            depth = indent // INDENT_UNIT
            col = indent + 1

            if stripped.startswith("intent:"):
                if depth != 0:
                    self.error(idx, col, "intent header must not be indented")
                    continue
                if builder is not None:
                    self.error(idx, col, "multiple intent headers; one workflow per document")
                    continue
                label, description = _split_description(stripped[len("intent:"):].strip())
                if not label:
                    self.error(idx, col, "intent header needs a label")
                    continue
                builder = TreeBuilder(self.workflow_id or label)
                root = builder.add(
                    ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label=label),
                    description=description,
                )
                node_lines[root] = idx
                stack = [(0, root, False)]
                group_state[root] = {"has_if": False, "has_else": False}
                continue

            if builder is None:
                self.error(idx, col, "missing intent header before this statement")
                continue
            if depth == 0:
                self.error(idx, col, "only the intent header may be at depth 0")
                continue

            while stack and stack[-1][0] >= depth:
                stack.pop()
            if not stack or stack[-1][0] != depth - 1:
                self.error(idx, 1, "indentation jumps more than one level")
                continue
            parent_depth, parent_id, parent_is_leaf = stack[-1]
            if parent_is_leaf:
                self.error(idx, col, "actions cannot have children")
                continue

            if stripped.startswith("then do") or stripped.startswith("then "):
                match = _THEN_DO_RE.match(stripped)
                if not match:
                    self.error(idx, col, "malformed action line; expected `then do Action <n>`")
                    continue
                id_text, hint = match.group(1), match.group(2)
                if not id_text.isdigit() or int(id_text) < 1:
                    self.error(idx, col, f"action id must be a positive integer, got {id_text!r}")
                    continue
                action_id = int(id_text)
                node_id = builder.add(ActionRef(action_id), parent=parent_id)
                node_lines[node_id] = idx
                if hint:
                    self.hints[action_id] = hint.strip()
                stack.append((depth, node_id, True))
                continue

            if stripped == "else" or stripped.startswith("else "):
                statement, description = _split_description(stripped)
                if statement != "else":
                    self.error(idx, col, "unexpected text after `else`")
                    continue
                state = group_state.setdefault(parent_id, {"has_if": False, "has_else": False})
                if not state["has_if"]:
                    self.error(idx, col, "dangling else: no earlier `if` at this level")
                    continue
                if state["has_else"]:
                    self.error(idx, col, "duplicate else at this level")
                    continue
                state["has_else"] = True
                node_id = builder.add(ElseMarker(), parent=parent_id, description=description)
                node_lines[node_id] = idx
                stack.append((depth, node_id, False))
                group_state[node_id] = {"has_if": False, "has_else": False}
                continue

            if stripped.startswith("if ") or stripped == "if":
                statement, description = _split_description(stripped)
                cond = self._parse_condition(statement, idx, col)
                if cond is None:
                    continue
                state = group_state.setdefault(parent_id, {"has_if": False, "has_else": False})
                state["has_if"] = True
                node_id = builder.add(cond, parent=parent_id, description=description)
                node_lines[node_id] = idx
                stack.append((depth, node_id, False))
                group_state[node_id] = {"has_if": False, "has_else": False}
                continue

            self.error(idx, col, f"unrecognized statement {stripped.split()[0]!r}")

        if builder is None:
            if not self.diagnostics:
                self.error(1, 1, "missing intent header")
            return None
        if any(d.severity == "error" for d in self.diagnostics):
            return None

        tree = builder.build()
        violations = validate_tree(tree)
        for violation in violations:
            line_no = node_lines.get(violation.node_id, 1)
            self.error(line_no, 1, violation.message)
        if any(d.severity == "error" for d in self.diagnostics):
            return None

        text = "\n".join(self.lines)
        return IcaDocument(
            workflow_id=tree.workflow_id,
            source_text=text,
            tree=tree,
            comment_hints=self.hints,
        )

    def _parse_condition(self, statement: str, line_no: int, col: int) -> ConditionExpr | None:
        body = statement[len("if"):].strip()
        if not body:
            self.error(line_no, col, "if statement needs a key")
            return None
        parts = body.split(None, 1)
        key = parts[0]
        rest = parts[1].strip() if len(parts) > 1 else ""
        if key.startswith('"'):
            self.error(line_no, col, "context keys must be bare words")
            return None
        if not rest:
            return ConditionExpr(kind=ConditionKind.BOOLEAN_TRUE, key=key)
        if rest == "exists":
            return ConditionExpr(kind=ConditionKind.EXISTS, key=key)
        if rest.startswith("<=") or rest.startswith(">="):
            self.error(line_no, col, f"unsupported test {rest[:2]!r}; only <, >, ==, != exist")
            return None
        for op, kind in (
            ("==", ConditionKind.EQUALS),
            ("!=", ConditionKind.NOT_EQUALS),
            ("<", ConditionKind.LESS_THAN),
            (">", ConditionKind.GREATER_THAN),
        ):
            if rest.startswith(op):
                literal = rest[len(op):].strip()
                value = self._parse_value(literal, line_no, col)
                if value is _INVALID:
                    return None
                return ConditionExpr(kind=kind, key=key, value=value)
        if rest == "in" or rest.startswith("in ") or rest.startswith("in{"):
            set_text = rest[2:].strip()
            values = self._parse_set(set_text, line_no, col)
            if values is None:
                return None
            return ConditionExpr(kind=ConditionKind.IN_SET, key=key, value=tuple(values))
        self.error(line_no, col, f"unknown test {rest.split()[0]!r}; expected ==, !=, <, >, in, or exists")
        return None

    def _parse_value(self, literal: str, line_no: int, col: int):
        if not literal:
            self.error(line_no, col, "comparison needs a value")
            return _INVALID
        if literal.startswith('"'):
            read = _read_quoted(literal, 0)
            if read is None:
                self.error(line_no, col, "unterminated quoted value")
                return _INVALID
            value, end = read
            if literal[end:].strip():
                self.error(line_no, col, "unexpected text after quoted value")
                return _INVALID
            return value
        return parse_scalar_literal(literal)

    def _parse_set(self, text: str, line_no: int, col: int) -> list[Scalar] | None:
        if not text.startswith("{") or not text.endswith("}"):
            self.error(line_no, col, "in-set test needs a {value, ...} list")
            return None
        inner = text[1:-1]
        values: list[Scalar] = []
        i = 0
        expecting = True
        while True:
            while i < len(inner) and inner[i] in " \t":
                i += 1
            if i >= len(inner):
                break
            if inner[i] == '"':
                read = _read_quoted(inner, i)
                if read is None:
                    self.error(line_no, col, "unterminated quoted value in set")
                    return None
                value, i = read
                values.append(value)
            else:
                j = i
                while j < len(inner) and inner[j] != ",":
                    j += 1
                element = inner[i:j].strip()
                if not element:
                    self.error(line_no, col, "empty element in value set")
                    return None
                values.append(parse_scalar_literal(element))
                i = j
            while i < len(inner) and inner[i] in " \t":
                i += 1
            if i < len(inner):
                if inner[i] != ",":
                    self.error(line_no, col, "expected `,` between set values")
                    return None
                i += 1
                expecting = True
            else:
                expecting = False
        if expecting and values:
            self.error(line_no, col, "trailing `,` in value set")
            return None
        if not values:
            self.error(line_no, col, "in-set test needs at least one value")
            return None
        return values


_INVALID = object()


def _split_description(text: str) -> tuple[str, str]:
    """Split a statement from its ` -- ` description.

    The first separator outside quoted values wins; quoted text may
    legitimately contain ` -- `.
    """
    in_quote = False
    i = 0
    while i < len(text):
        c = text[i]
        if in_quote:
            if c == "\\" and i + 1 < len(text):
                i += 2
                continue
            if c == '"':
                in_quote = False
        elif c == '"':
            in_quote = True
        elif text.startswith(" -- ", i):
            return text[:i].strip(), text[i + 4:].strip()
        i += 1
    return text.strip(), ""


def try_parse_ica(
    text: str, workflow_id: str | None = None, action_map: ActionMap | None = None
) -> tuple[IcaDocument | None, list[ParseDiagnostic]]:
    """Parse pseudocode; on failure return (None, error diagnostics)."""
    parser = _Parser(text, workflow_id)
    doc = parser.run()
    if doc is not None and action_map is not None:
        slice_entries = {
            (doc.workflow_id, aid): content
            for aid, content in action_map.for_workflow(doc.workflow_id).items()
        }
        doc.action_map = ActionMap(slice_entries)
    return doc, parser.diagnostics


def parse_ica(
    text: str, workflow_id: str | None = None, action_map: ActionMap | None = None
) -> IcaDocument:
    doc, diagnostics = try_parse_ica(text, workflow_id, action_map)
    if doc is None:
        raise IcaParseError([d for d in diagnostics if d.severity == "error"])
    return doc


# ---------------------------------------------------------------------------
# Printer


def _excerpt(content: str) -> str:
    collapsed = " ".join(content.split())
    return collapsed[:COMMENT_WIDTH]


def _check_printable(text: str, what: str) -> None:
    if "\n" in text or "\r" in text:
        raise IcaPrintError(f"{what} must not contain newlines: {text!r}")
    if text != text.strip():
        raise IcaPrintError(f"{what} must not have surrounding whitespace: {text!r}")


def _render_condition(cond: ConditionExpr) -> str:
    if not re.match(r"^\S+$", cond.key or " ") or cond.key.startswith('"'):
        raise IcaPrintError(f"context key is not printable: {cond.key!r}")
    if cond.kind is ConditionKind.BOOLEAN_TRUE:
        return f"if {cond.key}"
    if cond.kind is ConditionKind.EXISTS:
        return f"if {cond.key} exists"
    if cond.kind is ConditionKind.IN_SET:
        rendered = ", ".join(render_scalar(v) for v in cond.value)
        return f"if {cond.key} in {{{rendered}}}"
    op = {
        ConditionKind.EQUALS: "==",
        ConditionKind.NOT_EQUALS: "!=",
        ConditionKind.LESS_THAN: "<",
        ConditionKind.GREATER_THAN: ">",
    }[cond.kind]
    return f"if {cond.key} {op} {render_scalar(cond.value)}"


def print_ica(
    tree: DecisionTree,
    action_map: ActionMap | None = None,
    comment_hints: dict[int, str] | None = None,
) -> str:
    """Render a tree as pseudocode; the output re-parses to an equal tree.

    Leaf comments show the first 60 characters of the action content,
    looked up in ``action_map`` (or ``comment_hints`` for documents parsed
    without one).  A leaf with no content in either source is an error.
    """
    require_valid(tree)
    hints = comment_hints or {}
    lines: list[str] = []

    def emit(node: TreeNode, depth: int) -> None:
        pad = " " * (INDENT_UNIT * depth)
        payload = node.payload
        if isinstance(payload, PendingAction):
            raise IcaPrintError("assign action ids before printing")
        if isinstance(payload, ActionRef):
            if node.description:
                raise IcaPrintError(
                    "action leaves have no printable description; keep it empty"
                )
            content = action_map.get(tree.workflow_id, payload.action_id) if action_map else None
            if content is None:
                content = hints.get(payload.action_id)
            if content is None:
                raise IcaPrintError(
                    f"action {payload.action_id} of workflow {tree.workflow_id!r} "
                    "is not in the action map"
                )
            line = f"{pad}then do Action {payload.action_id}"
            excerpt = _excerpt(content)
            if excerpt:
                line += f"  # {excerpt}"
            lines.append(line)
            return
        _check_printable(node.description, "description")
        if isinstance(payload, ElseMarker):
            statement = "else"
        elif payload.kind is ConditionKind.INTENT_LABEL:
            _check_printable(payload.intent_label, "intent label")
            if " -- " in payload.intent_label or '"' in payload.intent_label:
                raise IcaPrintError(f"intent label is not printable: {payload.intent_label!r}")
            statement = f"intent: {payload.intent_label}"
        else:
            statement = _render_condition(payload)
        if node.description:
            statement += f" -- {node.description}"
        lines.append(pad + statement)
        for child_id in node.children:
            emit(tree.nodes[child_id], depth + 1)

    emit(tree.nodes[tree.root], 0)
    return "\n".join(lines) + "\n"


def normalize_ica(text: str, action_map: ActionMap | None = None) -> str:
    """The normal form of a document: parse then print (idempotent)."""
    doc = parse_ica(text, action_map=action_map)
    return print_ica(doc.tree, action_map=action_map, comment_hints=doc.comment_hints)


# ---------------------------------------------------------------------------
# Lint


@dataclass(frozen=True)
class LintWarning:
    code: str
    message: str
    node_id: str = ""

    def __str__(self):
        where = f" [{self.node_id}]" if self.node_id else ""
        return f"{self.code}: {self.message}{where}"


def _finite_match_set(cond: ConditionExpr) -> set | None:
    """Concrete values matching a condition, or None when the set is infinite."""
    kind = cond.kind
    if kind is ConditionKind.EQUALS:
        return {cond.value}
    if kind is ConditionKind.IN_SET:
        return set(cond.value)
    if kind is ConditionKind.BOOLEAN_TRUE:
        return {True}
    if kind is ConditionKind.NOT_EQUALS and scalar_kind(cond.value) == "bool":
        return {not cond.value}
    if kind in (ConditionKind.LESS_THAN, ConditionKind.GREATER_THAN):
        if scalar_kind(cond.value) != "number":
            return set()  # ordering against a non-number never matches
        return None
    return None


def condition_subsumes(a: ConditionExpr, b: ConditionExpr) -> bool:
    """True when every context value matching ``b`` also matches ``a``.

    Used for shadow detection: with first-match semantics a later sibling
    subsumed by an earlier one can never be the first match.
    """
    from .interpreter import condition_matches_present_value

    if a.kind is ConditionKind.INTENT_LABEL or b.kind is ConditionKind.INTENT_LABEL:
        return a == b
    if a.key != b.key:
        return False
    if a == b:
        return True
    if a.kind is ConditionKind.EXISTS:
        return True  # every other kind requires the key to be present
    b_values = _finite_match_set(b)
    if b_values is not None:
        return all(condition_matches_present_value(a, v) for v in b_values)
    # b matches infinitely many values; a must be one of the infinite kinds
    if a.kind is ConditionKind.LESS_THAN:
        return (
            b.kind is ConditionKind.LESS_THAN
            and scalar_kind(a.value) == "number"
            and scalar_kind(b.value) == "number"
            and b.value <= a.value
        )
    if a.kind is ConditionKind.GREATER_THAN:
        return (
            b.kind is ConditionKind.GREATER_THAN
            and scalar_kind(a.value) == "number"
            and scalar_kind(b.value) == "number"
            and b.value >= a.value
        )
    if a.kind is ConditionKind.NOT_EQUALS:
        if b.kind is ConditionKind.NOT_EQUALS:
            return scalars_equal_or_both(a.value, b.value)
        if b.kind not in (ConditionKind.LESS_THAN, ConditionKind.GREATER_THAN):
            return False
        if scalar_kind(a.value) != "number" or scalar_kind(b.value) != "number":
            return False
        if b.kind is ConditionKind.LESS_THAN:
            return a.value >= b.value
        return a.value <= b.value
    return False


def scalars_equal_or_both(a, b) -> bool:
    return scalar_kind(a) == scalar_kind(b) and a == b


def lint_ica(doc: IcaDocument) -> list[LintWarning]:
    """Report shadowed or duplicate sibling conditions and unused action ids."""
    warnings: list[LintWarning] = []
    tree = doc.tree

    for node in tree.preorder():
        earlier: list[TreeNode] = []
        for child in tree.children(node.node_id):
            payload = child.payload
            if isinstance(payload, ConditionExpr):
                for prev in earlier:
                    prev_payload = prev.payload
                    if not isinstance(prev_payload, ConditionExpr):
                        continue
                    if prev_payload == payload:
                        warnings.append(
                            LintWarning(
                                "duplicate-sibling",
                                f"duplicate sibling condition `{_render_condition(payload)}`",
                                child.node_id,
                            )
                        )
                        break
                    if condition_subsumes(prev_payload, payload):
                        warnings.append(
                            LintWarning(
                                "shadowed-sibling",
                                f"`{_render_condition(payload)}` is possibly shadowed by "
                                f"earlier `{_render_condition(prev_payload)}`",
                                child.node_id,
                            )
                        )
                        break
            earlier.append(child)

    used = {
        node.payload.action_id
        for node in tree.nodes.values()
        if isinstance(node.payload, ActionRef)
    }
    for action_id in sorted(doc.action_map.for_workflow(doc.workflow_id)):
        if action_id not in used:
            warnings.append(
                LintWarning("unused-action", f"action id {action_id} is in the map but unused")
            )
    return warnings


def describe_condition(cond: ConditionExpr) -> str:
    """Plain-English rendering of a predicate, used as a fallback description."""
    if cond.kind is ConditionKind.INTENT_LABEL:
        return f"the request is about {cond.intent_label}"
    if cond.kind is ConditionKind.BOOLEAN_TRUE:
        return f"`{cond.key}` is true"
    if cond.kind is ConditionKind.EXISTS:
        return f"`{cond.key}` is present"
    if cond.kind is ConditionKind.IN_SET:
        rendered = ", ".join(render_scalar(v, bare=True) for v in cond.value)
        return f"`{cond.key}` is one of {rendered}"
    verb = {
        ConditionKind.EQUALS: "is",
        ConditionKind.NOT_EQUALS: "is not",
        ConditionKind.LESS_THAN: "is less than",
        ConditionKind.GREATER_THAN: "is more than",
    }[cond.kind]
    return f"`{cond.key}` {verb} {render_scalar(cond.value, bare=True)}"
