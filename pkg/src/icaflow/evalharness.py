"""Offline evaluation: accuracy and average latency over a labeled dataset.

A case is correct iff the resolved (workflow, action) pair equals its gold
label; any non-ok status counts as incorrect — a non-answer is not a
correct action.  Two latency aggregates are reported and labeled
distinctly: the model-only average (client-reported call time) and the
end-to-end average including prompt assembly and parsing, since it is not
obvious which one a deployment cares about.

Cases run with bounded concurrency; correctness and per-case rows are
identical to a serial run because rows are assembled in dataset order and
mock decision streams derive from case content, not call order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .clients import LlmClient
from .errors import DatasetError
from .kb import KnowledgeBase
from .model import ActionMap, ContextRecord, compact_json
from .predict import STATUS_OK, Prediction, predict_with_candidates
from .retrieval import build_index, retrieve


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    query_text: str
    context: ContextRecord
    gold_workflow_id: str
    gold_action_id: int
    candidates: tuple[str, ...] | None = None  # pinned; default via retrieval

    def to_json_dict(self) -> dict:
        data = {
            "case_id": self.case_id,
            "query_text": self.query_text,
            "context": self.context.to_json_dict(),
            "gold": {"workflow_id": self.gold_workflow_id, "action_id": self.gold_action_id},
        }
        if self.candidates is not None:
            data["candidates"] = list(self.candidates)
        return data

    @classmethod
    def from_json_dict(cls, data: dict) -> "EvalCase":
        candidates = data.get("candidates")
        return cls(
            case_id=data["case_id"],
            query_text=data["query_text"],
            context=ContextRecord(dict(data["context"])),
            gold_workflow_id=data["gold"]["workflow_id"],
            gold_action_id=int(data["gold"]["action_id"]),
            candidates=tuple(candidates) if candidates is not None else None,
        )


def load_dataset(path: str | Path) -> list[EvalCase]:
    cases = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                cases.append(EvalCase.from_json_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise DatasetError(f"{path}:{line_no}: bad case record: {exc}") from exc
    return cases


def save_dataset(cases: Sequence[EvalCase], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for case in cases:
            handle.write(compact_json(case.to_json_dict()) + "\n")


@dataclass(frozen=True)
class CaseRow:
    case_id: str
    status: str
    predicted_workflow_id: str | None
    predicted_action_id: int | None
    gold_workflow_id: str
    gold_action_id: int
    correct: bool
    latency_seconds: float

    def to_json_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "status": self.status,
            "predicted_workflow_id": self.predicted_workflow_id,
            "predicted_action_id": self.predicted_action_id,
            "gold_workflow_id": self.gold_workflow_id,
            "gold_action_id": self.gold_action_id,
            "correct": self.correct,
            "latency_seconds": self.latency_seconds,
        }


@dataclass
class EvalReport:
    acc: float
    al_seconds: float          # mean model-call latency
    al_e2e_seconds: float      # mean end-to-end latency per case
    total: int
    status_counts: dict[str, int] = field(default_factory=dict)
    rows: list[CaseRow] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "acc": self.acc,
            "al_seconds": self.al_seconds,
            "al_e2e_seconds": self.al_e2e_seconds,
            "total": self.total,
            "status_counts": dict(sorted(self.status_counts.items())),
            "rows": [row.to_json_dict() for row in self.rows],
        }


@dataclass
class EvalConfig:
    with_cot: bool = True
    format: str = "ica"          # ica | richtext
    k: int = 3
    concurrency: int = 1
    token_budget: int = 4096
    max_output_tokens: int = 512
    timeout: float = 30.0


def _check_dataset(dataset: Sequence[EvalCase], kb: KnowledgeBase) -> None:
    known = set(kb.workflow_ids())
    for case in dataset:
        if case.gold_workflow_id not in known:
            raise DatasetError(
                f"case {case.case_id}: gold workflow {case.gold_workflow_id!r} not in kb"
            )
        if kb.action_map.get(case.gold_workflow_id, case.gold_action_id) is None:
            raise DatasetError(
                f"case {case.case_id}: gold action {case.gold_action_id} does not "
                f"resolve in workflow {case.gold_workflow_id!r}"
            )
        for workflow_id in case.candidates or ():
            if workflow_id not in known:
                raise DatasetError(
                    f"case {case.case_id}: pinned candidate {workflow_id!r} not in kb"
                )


def run_eval(
    dataset: Sequence[EvalCase],
    kb: KnowledgeBase,
    client: LlmClient,
    config: EvalConfig | None = None,
) -> EvalReport:
    """Evaluate every case and aggregate ACC and latency averages.

    Dataset/kb mismatches fail before any client call.
    """
    config = config or EvalConfig()
    _check_dataset(dataset, kb)
    index = build_index(kb.docs, kb.aliases)
    by_id = {doc.workflow_id: doc for doc in kb.docs}

    def run_case(case: EvalCase) -> tuple[CaseRow, float]:
        if case.candidates is not None:
            candidates = [by_id[workflow_id] for workflow_id in case.candidates]
        else:
            ranking = retrieve(index, case.query_text, k=config.k)
            candidates = [by_id[workflow_id] for workflow_id, _ in ranking]
        if not candidates:
            prediction = Prediction(status="no_intent_match")
        else:
            prediction = predict_with_candidates(
                case.query_text,
                case.context,
                candidates,
                kb.action_map,
                client,
                with_cot=config.with_cot,
                format=config.format,
                token_budget=config.token_budget,
                max_output_tokens=config.max_output_tokens,
                timeout=config.timeout,
            )
        correct = (
            prediction.status == STATUS_OK
            and prediction.workflow_id == case.gold_workflow_id
            and prediction.action_id == case.gold_action_id
        )
        row = CaseRow(
            case_id=case.case_id,
            status=prediction.status,
            predicted_workflow_id=prediction.workflow_id,
            predicted_action_id=prediction.action_id,
            gold_workflow_id=case.gold_workflow_id,
            gold_action_id=case.gold_action_id,
            correct=correct,
            latency_seconds=prediction.latency_seconds,
        )
        return row, prediction.latency_e2e_seconds

    if config.concurrency > 1:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            outcomes = list(pool.map(run_case, dataset))
    else:
        outcomes = [run_case(case) for case in dataset]

    rows = [row for row, _ in outcomes]
    e2e_latencies = [e2e for _, e2e in outcomes]
    total = len(rows)
    correct_count = sum(1 for row in rows if row.correct)
    status_counts: dict[str, int] = {}
    for row in rows:
        status_counts[row.status] = status_counts.get(row.status, 0) + 1

    return EvalReport(
        acc=correct_count / total if total else 0.0,
        al_seconds=sum(row.latency_seconds for row in rows) / total if total else 0.0,
        al_e2e_seconds=sum(e2e_latencies) / total if total else 0.0,
        total=total,
        status_counts=status_counts,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# Report comparison


def compare_reports(
    reports: dict[str, EvalReport], baseline: str | None = None
) -> tuple[str, dict]:
    """Side-by-side ACC/AL table with deltas against a baseline arm.

    Arms are compared over the same dataset; mismatched case sets are an
    error.  Every non-baseline cell shows its delta as ``(+x.xx)``, the
    presentation used for knowledge-format comparisons.
    """
    if len(reports) < 2:
        raise DatasetError("need at least two reports to compare")
    arms = list(reports)
    case_sets = {arm: tuple(row.case_id for row in reports[arm].rows) for arm in arms}
    reference = case_sets[arms[0]]
    for arm in arms[1:]:
        if sorted(case_sets[arm]) != sorted(reference):
            raise DatasetError(f"arm {arm!r} evaluates a different case set")
    base_arm = baseline if baseline is not None else arms[0]
    if base_arm not in reports:
        raise DatasetError(f"baseline arm {base_arm!r} missing from reports")
    base_acc = reports[base_arm].acc

    header = f"{'arm':<24} {'ACC':>16} {'AL(s)':>10} {'AL e2e(s)':>10}"
    lines = [header, "-" * len(header)]
    arms_json = {}
    for arm in arms:
        report = reports[arm]
        delta = report.acc - base_acc
        acc_cell = f"{report.acc:.3f}"
        if arm != base_arm:
            acc_cell += f" ({delta:+.2f})"
        lines.append(
            f"{arm:<24} {acc_cell:>16} {report.al_seconds:>10.3f} "
            f"{report.al_e2e_seconds:>10.3f}"
        )
        arms_json[arm] = {
            "acc": report.acc,
            "delta_acc": delta if arm != base_arm else 0.0,
            "al_seconds": report.al_seconds,
            "al_e2e_seconds": report.al_e2e_seconds,
            "total": report.total,
        }
    table = "\n".join(lines) + "\n"
    return table, {"baseline": base_arm, "arms": arms_json}


# ---------------------------------------------------------------------------
# Deriving a labeled dataset from generated instances


def derive_eval_dataset(instances: Sequence[dict]) -> tuple[list[EvalCase], KnowledgeBase]:
    """Build (cases, kb) from generated instance records.

    The generator's metadata carries each instance's candidate trees and
    action contents; those workflows become the knowledge base and the
    matched (workflow, action id) becomes the gold label, with candidates
    pinned in prompt order.  The interpreter acted as the annotator when
    the instances were generated.
    """
    from .lang import IcaDocument, print_ica
    from .model import tree_from_json_dict

    docs = []
    action_map = ActionMap()
    cases = []
    for record in instances:
        meta = record["meta"]
        candidate_ids = []
        for candidate in meta["candidates"]:
            tree = tree_from_json_dict(candidate["tree"])
            for aid, content in candidate["actions"].items():
                action_map.add(tree.workflow_id, int(aid), content)
            slice_map = ActionMap(
                {
                    (tree.workflow_id, int(aid)): content
                    for aid, content in candidate["actions"].items()
                }
            )
            text = print_ica(tree, action_map=slice_map)
            docs.append(
                IcaDocument(
                    workflow_id=tree.workflow_id,
                    source_text=text,
                    tree=tree,
                    action_map=slice_map,
                )
            )
            candidate_ids.append(tree.workflow_id)
        cases.append(
            EvalCase(
                case_id=f"case-{meta['index']:05d}",
                query_text=meta["query"],
                context=ContextRecord(dict(meta["context"])),
                gold_workflow_id=meta["matched"]["workflow_id"],
                gold_action_id=int(meta["matched"]["action_id"]),
                candidates=tuple(candidate_ids),
            )
        )
    kb = KnowledgeBase(docs=docs, action_map=action_map)
    return cases, kb


def load_instances_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
