"""Rich-text (HTML) workflow documents to decision trees.

The pipeline mirrors how legacy knowledge gets structured: decompose the
HTML into text blocks while retaining the element-tree nesting, label
each block as a condition or an action, then assemble a tree per intent.
Parsing is tolerant — unclosed ``li``/``p``/table tags are repaired — and
depends only on the standard library.

Free-text condition blocks become boolean flags keyed by a slug of the
text (the original wording is kept as the node description); refining
those into typed predicates is exactly the human review step this
pipeline feeds, so converted output ships with a review report flagging
low-confidence labels rather than being treated as final.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Protocol, Sequence

from .errors import IngestError, TransportError
from .lang import IcaDocument, print_ica
from .model import (
    ActionMap,
    ConditionExpr,
    ConditionKind,
    DecisionTree,
    ElseMarker,
    PendingAction,
    TreeBuilder,
    assign_action_ids,
)

HEADING_TAGS = {"h1", "h2", "h3", "h4", "h5", "h6"}
LIST_TAGS = {"ul", "ol"}
SKIP_TAGS = {"script", "style", "head", "title", "meta", "link"}
INLINE_TAGS = {"a", "b", "code", "em", "i", "mark", "small", "span", "strong", "sub", "sup", "u"}
VOID_TAGS = {"br", "hr", "img", "input", "meta", "link", "source", "wbr"}

# Opening one of these implicitly closes the listed open tags first.
_IMPLICIT_CLOSE = {
    "li": {"li", "p"},
    "td": {"td", "th", "p"},
    "th": {"td", "th", "p"},
    "tr": {"tr", "td", "th", "p"},
    "p": {"p"},
    "ul": {"p"},
    "ol": {"p"},
    "table": {"p"},
    "div": {"p"},
    "section": {"p"},
    "article": {"p"},
    **{h: {"p"} for h in HEADING_TAGS},
}

CONDITION_MARKERS = ("if ", "when ", "unless ", "in case ", "otherwise", "else")
ELSE_MARKERS = ("otherwise", "else")

IMPERATIVE_VERBS = frozenset(
    """
    add advise apply approve ask assign assist attach cancel charge check
    close collect confirm contact create credit decline deny direct document
    escalate explain flag follow forward grant guide help inform issue log
    notify offer open proceed process provide reach record refund release
    remove reply resend reset resolve respond review schedule send share
    submit transfer unlock update verify waive
    """.split()
)

LOW_CONFIDENCE = 0.75  # labels below this are flagged for human review


@dataclass(frozen=True)
class ContentBlock:
    block_id: str
    text: str
    depth: int
    parent_block_id: str | None
    source_kind: str  # heading | list-item | paragraph | table-cell

    def to_json_dict(self) -> dict:
        return {
            "block_id": self.block_id,
            "text": self.text,
            "depth": self.depth,
            "parent_block_id": self.parent_block_id,
            "source_kind": self.source_kind,
        }


@dataclass(frozen=True)
class BlockLabel:
    block_id: str
    label: str  # condition | action
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")


# ---------------------------------------------------------------------------
# HTML to blocks


class _Element:
    __slots__ = ("tag", "children")

    def __init__(self, tag: str):
        self.tag = tag
        self.children: list = []  # _Element or str


class _DomBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = _Element("#root")
        self.stack = [self.root]

    def handle_starttag(self, tag, attrs):
        if tag in VOID_TAGS:
            if tag == "br":
                self.stack[-1].children.append(" ")
            return
        closable = _IMPLICIT_CLOSE.get(tag, set())
        while len(self.stack) > 1 and self.stack[-1].tag in closable:
            self.stack.pop()
        element = _Element(tag)
        self.stack[-1].children.append(element)
        self.stack.append(element)

    def handle_endtag(self, tag):
        if tag in VOID_TAGS:
            return
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return
        # stray close tag: ignore

    def handle_data(self, data):
        if data:
            self.stack[-1].children.append(data)


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _inline_text(element: _Element) -> str:
    """Text of an element, descending only through inline children."""
    pieces: list[str] = []

    def collect(node) -> None:
        for child in node.children:
            if isinstance(child, str):
                pieces.append(child)
            elif child.tag in INLINE_TAGS:
                collect(child)

    collect(element)
    return _normalize("".join(pieces))


class _BlockExtractor:
    def __init__(self):
        self.blocks: list[ContentBlock] = []
        self._heading_stack: list[tuple[int, ContentBlock]] = []  # (level, block)
        self._count = 0

    def _new_block(self, text: str, parent: ContentBlock | None, kind: str) -> ContentBlock:
        self._count += 1
        block = ContentBlock(
            block_id=f"b{self._count}",
            text=text,
            depth=(parent.depth + 1) if parent else 1,
            parent_block_id=parent.block_id if parent else None,
            source_kind=kind,
        )
        self.blocks.append(block)
        return block

    def _flow_parent(self) -> ContentBlock | None:
        return self._heading_stack[-1][1] if self._heading_stack else None

    def walk(self, element: _Element, parent: ContentBlock | None, in_flow: bool) -> None:
        """Process children: inline runs become paragraphs, blocks dispatch."""
        run: list[str] = []

        def flush() -> None:
            text = _normalize("".join(run))
            run.clear()
            if text:
                self._new_block(text, parent if not in_flow else self._flow_parent(), "paragraph")

        for child in element.children:
            if isinstance(child, str):
                run.append(child)
            elif child.tag in INLINE_TAGS:
                run.append(" " + _inline_text(child) + " ")
            elif child.tag in SKIP_TAGS:
                continue
            else:
                flush()
                self._dispatch(child, parent, in_flow)
        flush()

    def _dispatch(self, element: _Element, parent: ContentBlock | None, in_flow: bool) -> None:
        tag = element.tag
        attach = parent if not in_flow else self._flow_parent()

        if tag in HEADING_TAGS:
            text = _inline_text(element)
            if not text:
                return
            if in_flow:
                level = int(tag[1])
                while self._heading_stack and self._heading_stack[-1][0] >= level:
                    self._heading_stack.pop()
                block = self._new_block(text, self._flow_parent(), "heading")
                self._heading_stack.append((level, block))
            else:
                self._new_block(text, attach, "heading")
            return

        if tag == "p":
            text = _inline_text(element)
            block = self._new_block(text, attach, "paragraph") if text else attach
            self._walk_nested_blocks(element, block if text else attach)
            return

        if tag in LIST_TAGS:
            for child in element.children:
                if isinstance(child, _Element) and child.tag == "li":
                    self._handle_li(child, attach)
                elif isinstance(child, _Element):
                    self._dispatch(child, attach, in_flow=False)
            return

        if tag == "table":
            self._handle_table(element, attach)
            return

        # transparent containers (div, section, body, ...)
        self.walk(element, parent, in_flow)

    def _walk_nested_blocks(self, element: _Element, parent: ContentBlock | None) -> None:
        for child in element.children:
            if isinstance(child, _Element) and child.tag not in INLINE_TAGS | SKIP_TAGS:
                self._dispatch(child, parent, in_flow=False)

    def _handle_li(self, element: _Element, parent: ContentBlock | None) -> None:
        text = _inline_text(element)
        block = self._new_block(text, parent, "list-item") if text else parent
        self._walk_nested_blocks(element, block)

    def _iter_rows(self, table: _Element) -> list[list[str]]:
        rows: list[list[str]] = []

        def scan(node: _Element) -> None:
            for child in node.children:
                if not isinstance(child, _Element):
                    continue
                if child.tag == "tr":
                    cells = [
                        _inline_text(cell)
                        for cell in child.children
                        if isinstance(cell, _Element) and cell.tag in ("td", "th")
                    ]
                    rows.append(cells)
                elif child.tag in ("thead", "tbody", "tfoot"):
                    scan(child)

        scan(table)
        return rows

    def _handle_table(self, table: _Element, parent: ContentBlock | None) -> None:
        rows = self._iter_rows(table)
        n_cols = max((len(r) for r in rows), default=0)
        if len(rows) >= 2 and n_cols >= 2:
            col_headers = rows[0] + [""] * (n_cols - len(rows[0]))
            for row in rows[1:]:
                if not row:
                    continue
                row_header = row[0]
                for j, cell in enumerate(row[1:], start=1):
                    if not cell:
                        continue
                    col = col_headers[j] if j < len(col_headers) else ""
                    self._new_block(f"{row_header} / {col}: {cell}", parent, "table-cell")
        else:
            for row in rows:
                for cell in row:
                    if cell:
                        self._new_block(cell, parent, "table-cell")


def extract_blocks(html_text: str) -> list[ContentBlock]:
    """Decompose HTML into ordered text blocks mirroring element nesting.

    Deterministic, attribute-order independent; an empty document yields an
    empty list.
    """
    if not isinstance(html_text, str):
        try:
            html_text = html_text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestError(f"input is not valid UTF-8: {exc}") from exc
    builder = _DomBuilder()
    builder.feed(html_text)
    builder.close()
    extractor = _BlockExtractor()
    extractor.walk(builder.root, parent=None, in_flow=True)
    return extractor.blocks


# ---------------------------------------------------------------------------
# Classification


class BlockClassifier(Protocol):
    def classify(self, blocks: Sequence[ContentBlock]) -> list[BlockLabel]:
        ...


def _starts_with_any(text: str, markers: Sequence[str]) -> bool:
    lowered = text.lower()
    return any(lowered.startswith(m) for m in markers)


def _first_word(text: str) -> str:
    match = re.match(r"[a-zA-Z]+", text)
    return match.group(0).lower() if match else ""


class RuleBasedClassifier:
    """Deterministic default: conditional markers vs imperative openers.

    Confidence encodes which rule fired so the review report can flag the
    weaker heuristics.
    """

    def classify(self, blocks: Sequence[ContentBlock]) -> list[BlockLabel]:
        has_children = {b.parent_block_id for b in blocks}
        labels = []
        for block in blocks:
            if _starts_with_any(block.text, CONDITION_MARKERS):
                labels.append(BlockLabel(block.block_id, "condition", 0.95))
            elif block.text.endswith(":") and block.block_id in has_children:
                labels.append(BlockLabel(block.block_id, "condition", 0.85))
            elif _first_word(block.text) in IMPERATIVE_VERBS:
                labels.append(BlockLabel(block.block_id, "action", 0.9))
            elif block.block_id in has_children:
                labels.append(BlockLabel(block.block_id, "condition", 0.7))
            else:
                labels.append(BlockLabel(block.block_id, "action", 0.5))
        return labels


_CLASSIFY_PROMPT = """Classify one block from a customer-support document.
Answer with exactly one word: `condition` if the block states a condition
on the user's intent or situation, or `action` if it describes an action
the support agent should take.

Block: {text}
"""


class LlmClassifier:
    """Delegates block labeling to an LLM client with a fixed prompt."""

    def __init__(self, client, max_output_tokens: int = 8, timeout: float = 30.0):
        self.client = client
        self.max_output_tokens = max_output_tokens
        self.timeout = timeout

    def classify(self, blocks: Sequence[ContentBlock]) -> list[BlockLabel]:
        labels = []
        for block in blocks:
            try:
                result = self.client.complete(
                    _CLASSIFY_PROMPT.format(text=block.text),
                    max_output_tokens=self.max_output_tokens,
                    timeout=self.timeout,
                )
            except TransportError as exc:
                raise TransportError(
                    f"classifier:{block.block_id}", str(exc)
                ) from exc
            answer = result.text.strip().lower()
            label = "condition" if "condition" in answer else "action"
            labels.append(BlockLabel(block.block_id, label, 0.9))
        return labels


def classify_blocks(
    blocks: Sequence[ContentBlock], classifier: BlockClassifier | None = None
) -> list[BlockLabel]:
    classifier = classifier or RuleBasedClassifier()
    return classifier.classify(blocks)


# ---------------------------------------------------------------------------
# Tree assembly


def slugify(text: str, sep: str = "_", max_tokens: int = 8) -> str:
    tokens = re.findall(r"[a-z0-9]+", text.lower())
    while tokens and tokens[0] in ("if", "when", "unless", "in", "case", "otherwise", "else", "the"):
        tokens = tokens[1:]
    if not tokens:
        tokens = re.findall(r"[a-z0-9]+", text.lower()) or ["block"]
    return sep.join(tokens[:max_tokens])


@dataclass
class AssemblyResult:
    tree: DecisionTree
    warnings: list[str] = field(default_factory=list)


def assemble_tree(
    blocks: Sequence[ContentBlock],
    labels: Sequence[BlockLabel],
    intent_label: str,
    intent_description: str = "",
) -> AssemblyResult:
    """Assemble labeled blocks into a pre-numbering decision tree.

    Condition blocks become internal nodes at their depth under a synthetic
    intent root; action blocks attach to the nearest preceding condition at
    lesser depth (or the root, with a warning).  Consecutive action blocks
    under one condition concatenate into a single leaf.  Conditions left
    with no actions beneath them are pruned with a warning.
    """
    label_by_id = {label.block_id: label.label for label in labels}
    for block in blocks:
        if block.block_id not in label_by_id:
            raise IngestError(f"block {block.block_id} has no label")

    warnings: list[str] = []
    builder = TreeBuilder(intent_label)
    root = builder.add(
        ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label=intent_label),
        description=intent_description or intent_label,
    )

    # (block depth, node id); root sits below any block depth
    stack: list[tuple[int, str]] = [(0, root)]
    used_keys: dict[str, int] = {}
    last_leaf: tuple[str, str] | None = None  # (parent node id, leaf node id)
    leaf_texts: dict[str, str] = {}
    any_action = False
    node_is_else: set[str] = set()
    has_if_child: dict[str, bool] = {root: False}

    def fresh_key(text: str) -> str:
        key = slugify(text)
        count = used_keys.get(key, 0)
        used_keys[key] = count + 1
        return key if count == 0 else f"{key}_{count + 1}"

    for block in blocks:
        while stack and stack[-1][0] >= block.depth:
            stack.pop()
        if not stack:
            stack = [(0, root)]
        parent_depth, parent_id = stack[-1]

        if label_by_id[block.block_id] == "condition":
            is_else = _starts_with_any(block.text, ELSE_MARKERS)
            if is_else and not has_if_child.get(parent_id, False):
                warnings.append(
                    f"block {block.block_id}: otherwise-block has no earlier condition "
                    "sibling; kept as a plain condition"
                )
                is_else = False
            if is_else:
                node_id = builder.add(ElseMarker(), parent=parent_id, description=block.text)
                node_is_else.add(node_id)
            else:
                node_id = builder.add(
                    ConditionExpr(kind=ConditionKind.BOOLEAN_TRUE, key=fresh_key(block.text)),
                    parent=parent_id,
                    description=block.text,
                )
                has_if_child[parent_id] = True
            has_if_child.setdefault(node_id, False)
            stack.append((block.depth, node_id))
            last_leaf = None
        else:
            if parent_id == root and parent_depth == 0:
                warnings.append(
                    f"block {block.block_id}: action has no governing condition; "
                    "attached directly under the intent"
                )
            if last_leaf is not None and last_leaf[0] == parent_id:
                leaf_id = last_leaf[1]
                leaf_texts[leaf_id] = leaf_texts[leaf_id] + "\n" + block.text
            else:
                leaf_id = builder.add(PendingAction(""), parent=parent_id, description="")
                leaf_texts[leaf_id] = block.text
                last_leaf = (parent_id, leaf_id)
            any_action = True

    if not any_action:
        raise IngestError(f"workflow {intent_label!r}: no actions found")

    assembled = builder.build()
    nodes = {
        node_id: (
            node
            if node_id not in leaf_texts
            else node.__class__(
                node_id=node.node_id,
                payload=PendingAction(leaf_texts[node_id]),
                children=(),
                description="",
            )
        )
        for node_id, node in assembled.nodes.items()
    }
    tree = DecisionTree(workflow_id=assembled.workflow_id, nodes=nodes, root=assembled.root)
    tree, pruned = _prune_childless(tree)
    for node_id, description in pruned:
        warnings.append(
            f"condition without any action beneath it was dropped: {description!r} ({node_id})"
        )
    return AssemblyResult(tree=tree, warnings=warnings)


def _prune_childless(tree: DecisionTree) -> tuple[DecisionTree, list[tuple[str, str]]]:
    """Iteratively drop internal nodes that end up with no children."""
    pruned: list[tuple[str, str]] = []
    nodes = dict(tree.nodes)
    changed = True
    while changed:
        changed = False
        empty = {
            node_id
            for node_id, node in nodes.items()
            if not node.is_leaf and not node.children and node_id != tree.root
        }
        if empty:
            changed = True
            for node_id in sorted(empty):
                pruned.append((node_id, nodes[node_id].description))
                del nodes[node_id]
            nodes = {
                node_id: node.__class__(
                    node_id=node.node_id,
                    payload=node.payload,
                    children=tuple(c for c in node.children if c not in empty),
                    description=node.description,
                )
                for node_id, node in nodes.items()
            }
    # dropping conditions may orphan an else at the head of its group; such
    # trees fail validation, which convert surfaces as an ingest error
    return DecisionTree(workflow_id=tree.workflow_id, nodes=nodes, root=tree.root), pruned


# ---------------------------------------------------------------------------
# Whole-document conversion


@dataclass
class ConvertedWorkflow:
    doc: IcaDocument
    warnings: list[str] = field(default_factory=list)
    block_ids: list[str] = field(default_factory=list)


@dataclass
class ConversionResult:
    workflows: list[ConvertedWorkflow] = field(default_factory=list)
    action_map: ActionMap = field(default_factory=ActionMap)
    blocks: list[ContentBlock] = field(default_factory=list)
    labels: list[BlockLabel] = field(default_factory=list)
    skipped_blocks: list[str] = field(default_factory=list)
    split_by_heading: bool = False

    def review_report(self, document_name: str) -> dict:
        label_by_id = {label.block_id: label for label in self.labels}
        workflow_by_block: dict[str, str] = {}
        for wf in self.workflows:
            for block_id in wf.block_ids:
                workflow_by_block[block_id] = wf.doc.workflow_id
        rows = []
        for block in self.blocks:
            label = label_by_id[block.block_id]
            rows.append(
                {
                    **block.to_json_dict(),
                    "label": label.label,
                    "confidence": label.confidence,
                    "flagged": label.confidence < LOW_CONFIDENCE,
                    "workflow_id": workflow_by_block.get(block.block_id),
                }
            )
        return {
            "document": document_name,
            "split_by_heading": self.split_by_heading,
            "workflows": [
                {
                    "workflow_id": wf.doc.workflow_id,
                    "intent_label": wf.doc.intent_label(),
                    "warnings": wf.warnings,
                }
                for wf in self.workflows
            ],
            "skipped_blocks": self.skipped_blocks,
            "blocks": rows,
        }


def _descendants(blocks: Sequence[ContentBlock], root_id: str) -> list[ContentBlock]:
    children: dict[str | None, list[ContentBlock]] = {}
    for block in blocks:
        children.setdefault(block.parent_block_id, []).append(block)
    order = {block.block_id: i for i, block in enumerate(blocks)}
    out: list[ContentBlock] = []

    def collect(block_id: str) -> None:
        for child in children.get(block_id, ()):
            out.append(child)
            collect(child.block_id)

    collect(root_id)
    return sorted(out, key=lambda b: order[b.block_id])


def convert_document(
    html_text: str,
    doc_id: str,
    classifier: BlockClassifier | None = None,
) -> ConversionResult:
    """Convert one HTML document into one or more workflows.

    Multi-intent documents (several top-level headings) split into one tree
    per heading; the split is recorded in the review report.
    """
    blocks = extract_blocks(html_text)
    if not blocks:
        raise IngestError(f"{doc_id}: document has no content blocks")
    labels = classify_blocks(blocks, classifier)
    result = ConversionResult(blocks=blocks, labels=labels)

    top_headings = [b for b in blocks if b.source_kind == "heading" and b.depth == 1]
    consumed: set[str] = set()

    def build_workflow(
        workflow_id: str,
        intent_label: str,
        intent_description: str,
        workflow_blocks: list[ContentBlock],
    ) -> None:
        assembly = assemble_tree(workflow_blocks, labels, intent_label, intent_description)
        numbered, slice_map = assign_action_ids(
            DecisionTree(workflow_id=workflow_id, nodes=assembly.tree.nodes, root=assembly.tree.root)
        )
        text = print_ica(numbered, action_map=slice_map)
        doc = IcaDocument(
            workflow_id=workflow_id,
            source_text=text,
            tree=numbered,
            action_map=slice_map,
        )
        result.action_map.merge(slice_map)
        result.workflows.append(
            ConvertedWorkflow(
                doc=doc,
                warnings=assembly.warnings,
                block_ids=[b.block_id for b in workflow_blocks],
            )
        )

    if len(top_headings) >= 2:
        result.split_by_heading = True
        for heading in top_headings:
            subtree = _descendants(blocks, heading.block_id)
            if not subtree:
                result.skipped_blocks.append(heading.block_id)
                continue
            label = slugify(heading.text, sep="-")
            build_workflow(f"{doc_id}--{label}", label, heading.text, subtree)
            consumed.add(heading.block_id)
            consumed.update(b.block_id for b in subtree)
    elif len(top_headings) == 1:
        heading = top_headings[0]
        subtree = _descendants(blocks, heading.block_id)
        build_workflow(doc_id, slugify(heading.text, sep="-"), heading.text, subtree)
        consumed.add(heading.block_id)
        consumed.update(b.block_id for b in subtree)
    else:
        build_workflow(doc_id, slugify(doc_id, sep="-"), doc_id, list(blocks))
        consumed.update(b.block_id for b in blocks)

    result.skipped_blocks.extend(
        b.block_id for b in blocks if b.block_id not in consumed
    )
    return result
