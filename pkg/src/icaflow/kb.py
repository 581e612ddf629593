"""Loading and saving knowledge-base directories.

A knowledge base is a directory of ``<workflow_id>.ica`` files plus
``actions.json`` (the combined action map) and, optionally,
``aliases.json`` mapping workflow ids to alias phrases for retrieval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IcaError
from .lang import IcaDocument, parse_ica, print_ica
from .model import ActionMap, canonical_json, check_workflow_numbering

ACTIONS_FILE = "actions.json"
ALIASES_FILE = "aliases.json"


@dataclass
class KnowledgeBase:
    docs: list[IcaDocument] = field(default_factory=list)
    action_map: ActionMap = field(default_factory=ActionMap)
    aliases: dict[str, list[str]] = field(default_factory=dict)

    def doc(self, workflow_id: str) -> IcaDocument:
        for doc in self.docs:
            if doc.workflow_id == workflow_id:
                return doc
        raise IcaError(f"workflow {workflow_id!r} not in knowledge base")

    def workflow_ids(self) -> list[str]:
        return [doc.workflow_id for doc in self.docs]


def load_kb(directory: str | Path) -> KnowledgeBase:
    """Load every .ica file (sorted by name) with its action-map slice."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IcaError(f"knowledge base directory {directory} does not exist")

    action_map = ActionMap()
    actions_path = directory / ACTIONS_FILE
    if actions_path.exists():
        action_map = ActionMap.from_json_dict(json.loads(actions_path.read_text("utf-8")))

    aliases: dict[str, list[str]] = {}
    aliases_path = directory / ALIASES_FILE
    if aliases_path.exists():
        aliases = json.loads(aliases_path.read_text("utf-8"))

    docs = []
    for path in sorted(directory.glob("*.ica")):
        doc = parse_ica(path.read_text("utf-8"), workflow_id=path.stem, action_map=action_map)
        problems = check_workflow_numbering(doc.tree)
        if problems:
            raise IcaError(f"{path.name}: {problems[0]}")
        docs.append(doc)
    if not docs:
        raise IcaError(f"no .ica files in {directory}")
    return KnowledgeBase(docs=docs, action_map=action_map, aliases=aliases)


def save_kb(kb: KnowledgeBase, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for doc in kb.docs:
        text = print_ica(doc.tree, action_map=kb.action_map, comment_hints=doc.comment_hints)
        (directory / f"{doc.workflow_id}.ica").write_text(text, "utf-8")
    (directory / ACTIONS_FILE).write_text(canonical_json(kb.action_map.to_json_dict()), "utf-8")
    if kb.aliases:
        (directory / ALIASES_FILE).write_text(canonical_json(kb.aliases), "utf-8")
