"""Randomized generation of chain-of-thought fine-tuning instances.

Each instance is built in three steps: sample a (query, context) pair plus
a branch of conditions they satisfy; graft divergent branches that
provably do not match (mutating matched nodes, spawning new trees for
root mutations, or attaching irrelevant branches); then derive the
rationale text by replaying the interpreter over the assembled candidates.

Every emitted instance is self-consistent by verification, not by
construction alone: the instance's own prompt artifacts are parsed back
and re-evaluated, and candidates whose replay disagrees with the label are
discarded and regenerated (counted toward a skip rate with a hard
threshold).  Output is byte-deterministic for a fixed (seed, config,
pools): every instance derives its own SHA-256 sub-seed from
(master seed, index, attempt) and drives a seeded Mersenne Twister, so
parallel and serial generation emit identical content.
"""

from __future__ import annotations

import hashlib
import random
import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import GenerationError
from .interpreter import MATCHED, UNKNOWN, EvalTrace, eval_condition, evaluate
from .lang import IcaDocument, describe_condition, parse_ica, print_ica, render_scalar
from .model import (
    ActionMap,
    ActionRef,
    ConditionExpr,
    ConditionKind,
    ContextRecord,
    DecisionTree,
    PendingAction,
    TreeBuilder,
    UserQuery,
    assign_action_ids,
)
from .pools import PoolCondition, PoolIntent, Pools
from .prompts import build_prompt, parse_prompt
from .retrieval import infer_intent_label

_PROBE_QUERY = UserQuery("probe")


@dataclass
class SynthConfig:
    max_branch_depth: int = 4      # context conditions per matched branch
    min_divergent: int = 2
    max_divergent: int = 6
    max_trees: int = 3             # candidate workflows per prompt
    min_mismatch_nodes: int = 1    # non-aligning nodes required per divergent branch
    max_retries: int = 100
    skip_rate_threshold: float = 0.05
    token_budget: int = 4096


@dataclass(frozen=True)
class MatchedBranch:
    query: UserQuery
    ctx: ContextRecord
    intent: PoolIntent
    conditions: tuple[PoolCondition, ...]
    action_text: str

    def to_json_dict(self) -> dict:
        from .pools import condition_to_json

        return {
            "query": self.query.text,
            "intent_label": self.query.intent_label,
            "context": self.ctx.to_json_dict(),
            "conditions": [condition_to_json(c) for c in self.conditions],
            "action_text": self.action_text,
        }


@dataclass(frozen=True)
class DivergentInfo:
    workflow_id: str
    mechanism: str  # root-mutation | branch-mutation | irrelevant-branch
    node_id: str    # head node of the divergent branch


@dataclass
class SynthesizedCandidates:
    """Numbered candidate trees with their action contents and provenance."""

    trees: list[DecisionTree]
    action_map: ActionMap
    matched_workflow: str
    matched_leaf: str
    divergent: list[DivergentInfo]

    def matched_action_id(self) -> int:
        tree = next(t for t in self.trees if t.workflow_id == self.matched_workflow)
        payload = tree.nodes[self.matched_leaf].payload
        assert isinstance(payload, ActionRef)
        return payload.action_id


@dataclass(frozen=True)
class SftInstance:
    instruction: str
    label: str
    meta: dict

    def to_json_dict(self) -> dict:
        return {"instruction": self.instruction, "label": self.label, "meta": self.meta}


@dataclass
class DatasetResult:
    instances: list[SftInstance] = field(default_factory=list)
    emitted: int = 0
    skipped: int = 0
    skip_reasons: list[str] = field(default_factory=list)

    @property
    def skip_rate(self) -> float:
        attempts = self.emitted + self.skipped
        return self.skipped / attempts if attempts else 0.0


def _as_rng(seed_or_rng: int | random.Random) -> random.Random:
    if isinstance(seed_or_rng, random.Random):
        return seed_or_rng
    return random.Random(seed_or_rng)


def derive_subseed(master_seed: int, index: int, attempt: int = 0) -> int:
    """Platform-stable per-instance seed (SHA-256 of the coordinates)."""
    digest = hashlib.sha256(f"{master_seed}:{index}:{attempt}".encode()).hexdigest()
    return int(digest[:16], 16)


def fill_action_template(template: str, rng: random.Random) -> str:
    """Instantiate an action template's placeholders from the stream."""
    out = template
    if "{amount}" in out:
        out = out.replace("{amount}", str(rng.randrange(5, 100, 5)))
    if "{days}" in out:
        out = out.replace("{days}", str(rng.randint(1, 14)))
    if "{code}" in out:
        code = "".join(rng.choice(string.ascii_uppercase) for _ in range(3))
        out = out.replace("{code}", f"{code}-{rng.randint(1000, 9999)}")
    return out


def _condition_matches(entry: PoolCondition, ctx: ContextRecord) -> bool:
    return eval_condition(entry.condition, _PROBE_QUERY, ctx).matched


def synth_matched_branch(
    pools: Pools,
    rng_seed: int | random.Random,
    config: SynthConfig | None = None,
) -> MatchedBranch:
    """Sample a query, its context, and a branch they fully satisfy.

    The branch is one intent condition plus 1..max_branch_depth context
    conditions, each verified against the sampled context.  Raises
    :class:`GenerationError` when the pools cannot satisfy the constraints
    within the retry budget.
    """
    config = config or SynthConfig()
    rng = _as_rng(rng_seed)
    problems = pools.validate()
    if problems:
        raise GenerationError("invalid pools: " + "; ".join(problems))

    last_reason = "no pool records"
    for _ in range(config.max_retries):
        record = rng.choice(pools.records)
        satisfiable = [c for c in pools.conditions if _condition_matches(c, record.context)]
        if not satisfiable:
            last_reason = (
                f"no pool condition is satisfied by the context of {record.query!r}"
            )
            continue
        depth = rng.randint(1, config.max_branch_depth)
        if depth > len(satisfiable):
            last_reason = (
                f"wanted a branch of {depth} conditions but only "
                f"{len(satisfiable)} are satisfiable for {record.query!r}"
            )
            continue
        conditions = tuple(rng.sample(satisfiable, depth))
        query = UserQuery(record.query, intent_label=record.intent_label)
        intent = pools.intent_by_label(record.intent_label)
        action_text = fill_action_template(rng.choice(pools.action_templates), rng)
        for entry in conditions:  # verified, never assumed
            if not _condition_matches(entry, record.context):
                raise GenerationError("sampled condition unexpectedly fails")
        return MatchedBranch(
            query=query,
            ctx=record.context,
            intent=intent,
            conditions=conditions,
            action_text=action_text,
        )
    raise GenerationError(f"could not build a matched branch: {last_reason}")


def _failing_conditions(pools: Pools, ctx: ContextRecord) -> list[PoolCondition]:
    return [c for c in pools.conditions if not _condition_matches(c, ctx)]


def _failing_variant(
    entry: PoolCondition, ctx: ContextRecord, pools: Pools, rng: random.Random
) -> PoolCondition:
    """A condition on the same key guaranteed to fail against ``ctx``."""
    cond = entry.condition
    same_key = [
        c
        for c in pools.conditions
        if c.condition.key == cond.key
        and c.condition != cond
        and not _condition_matches(c, ctx)
    ]
    if same_key:
        return rng.choice(same_key)
    observed = ctx.get(cond.key)  # present: the original condition matched
    derived = ConditionExpr(kind=ConditionKind.NOT_EQUALS, key=cond.key, value=observed)
    return PoolCondition(derived, describe_condition(derived))


def _mismatch_count(
    conditions: Iterable[PoolCondition], query: UserQuery, ctx: ContextRecord
) -> int:
    return sum(
        0 if eval_condition(c.condition, query, ctx).matched else 1 for c in conditions
    )


def _sample_divergent_conditions(
    pools: Pools,
    query: UserQuery,
    ctx: ContextRecord,
    rng: random.Random,
    length: int,
    required_failures: int,
    config: SynthConfig,
) -> list[PoolCondition]:
    """Conditions for one divergent branch with enough non-aligning nodes."""
    failing = _failing_conditions(pools, ctx)
    if len(failing) < required_failures:
        raise GenerationError(
            f"need {required_failures} failing condition(s) per divergent branch "
            f"but the pool only offers {len(failing)} against this context"
        )
    for _ in range(config.max_retries):
        chosen = rng.sample(pools.conditions, min(length, len(pools.conditions)))
        if _mismatch_count(chosen, query, ctx) >= required_failures:
            return list(chosen)
        padding = rng.sample(failing, required_failures)
        merged = list(chosen) + [c for c in padding if c not in chosen]
        if _mismatch_count(merged, query, ctx) >= required_failures:
            return merged
    raise GenerationError("could not assemble a divergent branch within the retry budget")


def synth_divergent_branches(
    matched: MatchedBranch,
    pools: Pools,
    rng_seed: int | random.Random,
    n_divergent: int | None = None,
    config: SynthConfig | None = None,
    workflow_prefix: str = "syn",
) -> SynthesizedCandidates:
    """Assemble candidate trees: the matched branch plus divergent ones.

    Root mutations spawn separate trees (new workflow ids); other
    mechanisms graft siblings into the matched tree.  Every divergent
    branch is verified to contain at least ``min_mismatch_nodes`` nodes
    that do not align with (query, context) — divergence is checked, never
    assumed.
    """
    config = config or SynthConfig()
    rng = _as_rng(rng_seed)
    query, ctx = matched.query, matched.ctx

    if n_divergent is None:
        n_divergent = rng.randint(config.min_divergent, config.max_divergent)
    n_root = rng.randint(0, min(n_divergent, config.max_trees - 1))
    n_grafts = n_divergent - n_root

    builder = TreeBuilder(f"{workflow_prefix}-w1")
    chain = [
        builder.add(
            ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label=matched.intent.label),
            description=matched.intent.description,
        )
    ]
    for entry in matched.conditions:
        chain.append(builder.add(entry.condition, parent=chain[-1], description=entry.description))
    matched_leaf_handle = builder.add(
        PendingAction(matched.action_text),
        parent=chain[-1],
    )

    divergent: list[DivergentInfo] = []
    required = config.min_mismatch_nodes

    def graft_branch(mechanism: str) -> None:
        if mechanism == "branch-mutation":
            position = rng.randrange(len(matched.conditions))
            parent = chain[position]
            head_entry = _failing_variant(matched.conditions[position], ctx, pools, rng)
            tail_length = rng.randint(0, 2)
            tail = (
                _sample_divergent_conditions(
                    pools, query, ctx, rng, tail_length, max(0, required - 1), config
                )
                if required > 1 or tail_length > 0
                else []
            )
            branch_entries = [head_entry] + tail
        else:  # irrelevant-branch
            parent = chain[rng.randrange(len(chain))]
            length = rng.randint(1, config.max_branch_depth)
            branch_entries = _sample_divergent_conditions(
                pools, query, ctx, rng, length, required, config
            )
        if _mismatch_count(branch_entries, query, ctx) < required:
            raise GenerationError("divergent branch does not diverge enough")
        index = rng.randint(0, len(builder.children_of(parent)))
        head = builder.insert(
            branch_entries[0].condition,
            parent=parent,
            index=index,
            description=branch_entries[0].description,
        )
        node = head
        for entry in branch_entries[1:]:
            node = builder.add(entry.condition, parent=node, description=entry.description)
        builder.add(
            PendingAction(fill_action_template(rng.choice(pools.action_templates), rng)),
            parent=node,
            description="",
        )
        divergent.append(DivergentInfo(builder.workflow_id, mechanism, head))

    for _ in range(n_grafts):
        graft_branch(rng.choice(("branch-mutation", "irrelevant-branch")))

    raw_trees = [builder.build()]
    matched_leaf_id = matched_leaf_handle

    other_intents = [i for i in pools.intents if i.label != matched.intent.label]
    for tree_index in range(n_root):
        mutated_builder = TreeBuilder(f"{workflow_prefix}-w{tree_index + 2}")
        if other_intents:
            intent = rng.choice(other_intents)
        else:
            intent = PoolIntent("unrelated-request", "An unrelated request", ())
        root = mutated_builder.add(
            ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label=intent.label),
            description=intent.description,
        )
        length = rng.randint(1, config.max_branch_depth)
        node = root
        entries = (
            _sample_divergent_conditions(pools, query, ctx, rng, length, required - 1, config)
            if required > 1
            else [rng.choice(pools.conditions) for _ in range(length)]
        )
        for entry in entries:
            node = mutated_builder.add(entry.condition, parent=node, description=entry.description)
        mutated_builder.add(
            PendingAction(fill_action_template(rng.choice(pools.action_templates), rng)),
            parent=node,
            description="",
        )
        if intent.label == matched.intent.label:
            raise GenerationError("root mutation produced the matched intent")
        raw_trees.append(mutated_builder.build())
        divergent.append(DivergentInfo(mutated_builder.workflow_id, "root-mutation", root))

    rng.shuffle(raw_trees)

    trees: list[DecisionTree] = []
    action_map = ActionMap()
    for raw in raw_trees:
        numbered, slice_map = assign_action_ids(raw)
        trees.append(numbered)
        action_map.merge(slice_map)

    result = SynthesizedCandidates(
        trees=trees,
        action_map=action_map,
        matched_workflow=f"{workflow_prefix}-w1",
        matched_leaf=matched_leaf_id,
        divergent=divergent,
    )
    _verify_divergence(result, query, ctx)
    return result


def _verify_divergence(
    candidates: SynthesizedCandidates, query: UserQuery, ctx: ContextRecord
) -> None:
    trace = evaluate(candidates.trees, query, ctx)
    matched_branches = trace.matched_branches()
    if trace.matched is None:
        raise GenerationError("assembled candidates do not match at all")
    if (
        trace.matched.workflow_id != candidates.matched_workflow
        or trace.matched.path[-1] != candidates.matched_leaf
    ):
        raise GenerationError("a divergent branch out-matched the intended branch")
    if len(matched_branches) != 1:
        raise GenerationError("more than one branch matches; divergence violated")


def synth_cot(
    trace: EvalTrace,
    trees: Sequence[DecisionTree],
    query: UserQuery,
    ctx: ContextRecord,
) -> str:
    """Deterministic rationale: one numbered line per branch in the trace.

    Non-matching branches state their first failing node's description and
    the observed value; the matched branch lists every node description on
    its path.  The final line is the action id in the exact form the
    response parser expects.
    """
    if trace.matched is None:
        raise GenerationError("rationale synthesis requires a matched branch")
    by_id = {tree.workflow_id: tree for tree in trees}
    lines = []
    for i, branch in enumerate(trace.branches, start=1):
        tree = by_id[branch.workflow_id]
        node = tree.nodes[branch.node_id]
        desc = node.description or _fallback_description(node)
        wf = branch.workflow_id
        if branch.status == MATCHED:
            descs = []
            for node_id in branch.path:
                path_node = tree.nodes[node_id]
                descs.append(path_node.description or _fallback_description(path_node))
            lines.append(f"{i}. Workflow {wf} matches: " + "; ".join(descs) + ".")
        elif branch.status == UNKNOWN:
            if branch.key == "intent":
                lines.append(
                    f"{i}. Workflow {wf} cannot be checked: \"{desc}\" needs the query "
                    "intent but it is unknown."
                )
            else:
                lines.append(
                    f"{i}. Workflow {wf} cannot be checked: \"{desc}\" needs "
                    f"`{branch.key}` but it is missing."
                )
        else:  # FAILED
            if branch.key == "intent":
                observed = branch.observed if branch.observed is not None else "unknown"
                lines.append(
                    f"{i}. Workflow {wf} does not match: \"{desc}\" fails because "
                    f"the query intent is `{observed}`."
                )
            elif branch.key == "":
                lines.append(
                    f"{i}. Workflow {wf} does not match: \"{desc}\" fails because "
                    "an earlier branch matched."
                )
            elif branch.observed is None:
                lines.append(
                    f"{i}. Workflow {wf} does not match: \"{desc}\" fails because "
                    f"`{branch.key}` is absent."
                )
            else:
                rendered = render_scalar(branch.observed, bare=True)
                lines.append(
                    f"{i}. Workflow {wf} does not match: \"{desc}\" fails because "
                    f"`{branch.key}` is `{rendered}`."
                )
    lines.append(f"Action: {trace.matched.action_id}")
    return "\n".join(lines)


def _fallback_description(node) -> str:
    payload = node.payload
    if isinstance(payload, ConditionExpr):
        return describe_condition(payload)
    if isinstance(payload, ActionRef):
        return f"take Action {payload.action_id}"
    if isinstance(payload, PendingAction):
        return payload.text
    return "otherwise"


def build_instance(
    pools: Pools,
    subseed: int,
    index: int,
    config: SynthConfig,
) -> SftInstance:
    """One fully verified instance; raises GenerationError when replay disagrees."""
    rng = random.Random(subseed)
    matched = synth_matched_branch(pools, rng, config)
    candidates = synth_divergent_branches(
        matched, pools, rng, config=config, workflow_prefix=f"syn-{index:05d}"
    )

    docs = []
    for tree in candidates.trees:
        text = print_ica(tree, action_map=candidates.action_map)
        docs.append(
            IcaDocument(
                workflow_id=tree.workflow_id,
                source_text=text,
                tree=tree,
                action_map=ActionMap(
                    {
                        (tree.workflow_id, aid): content
                        for aid, content in candidates.action_map.for_workflow(
                            tree.workflow_id
                        ).items()
                    }
                ),
            )
        )

    prompt, plan = build_prompt(
        matched.query, matched.ctx, docs, with_cot=True, token_budget=config.token_budget
    )
    local_id = candidates.matched_action_id()
    label_gid = plan.to_global[(candidates.matched_workflow, local_id)]

    # Self-consistency: replay the instance from its own prompt artifacts,
    # inferring the intent exactly as the online pipeline would.
    parsed = parse_prompt(prompt)
    replay_docs = [parse_ica(text) for text in parsed.workflow_texts]
    inferred = infer_intent_label(parsed.query_text, replay_docs)
    replay_query = UserQuery(parsed.query_text, intent_label=inferred)
    replay_trace = evaluate([d.tree for d in replay_docs], replay_query, parsed.context)
    if replay_trace.matched is None or replay_trace.matched.action_id != label_gid:
        got = replay_trace.matched.action_id if replay_trace.matched else None
        raise GenerationError(
            f"replay disagreement: label is Action {label_gid}, replay produced {got}"
        )
    if len(replay_trace.matched_branches()) != 1:
        raise GenerationError("replay found more than one matching branch")

    label = synth_cot(replay_trace, [d.tree for d in replay_docs], replay_query, parsed.context)

    meta = {
        "index": index,
        "seed": subseed,
        "query": matched.query.text,
        "intent_label": matched.query.intent_label,
        "context": matched.ctx.to_json_dict(),
        "matched": {
            "workflow_id": candidates.matched_workflow,
            "action_id": local_id,
            "global_action_id": label_gid,
        },
        "divergent": [
            {"workflow_id": d.workflow_id, "mechanism": d.mechanism, "node_id": d.node_id}
            for d in candidates.divergent
        ],
        "candidates": [
            {
                "workflow_id": tree.workflow_id,
                "tree": _tree_json(tree),
                "actions": {
                    str(aid): content
                    for aid, content in candidates.action_map.for_workflow(
                        tree.workflow_id
                    ).items()
                },
            }
            for tree in candidates.trees
        ],
    }
    return SftInstance(instruction=prompt, label=label, meta=meta)


def _tree_json(tree: DecisionTree) -> dict:
    from .model import tree_to_json_dict

    return tree_to_json_dict(tree)


def generate_dataset(
    pools: Pools,
    n_instances: int,
    rng_seed: int,
    config: SynthConfig | None = None,
) -> DatasetResult:
    """Generate ``n_instances`` verified instances (deterministic per seed).

    Candidates that fail replay verification are discarded and regenerated
    with a derived retry seed; the skip rate must stay at or below the
    configured threshold or generation aborts with diagnostics.
    """
    config = config or SynthConfig()
    problems = pools.validate()
    if problems:
        raise GenerationError("invalid pools: " + "; ".join(problems))

    result = DatasetResult()
    for index in range(n_instances):
        instance = None
        for attempt in range(config.max_retries):
            subseed = derive_subseed(rng_seed, index, attempt)
            try:
                instance = build_instance(pools, subseed, index, config)
                break
            except GenerationError as exc:
                result.skipped += 1
                if len(result.skip_reasons) < 20:
                    result.skip_reasons.append(f"instance {index} attempt {attempt}: {exc}")
        if instance is None:
            raise GenerationError(
                f"instance {index} failed {config.max_retries} attempts; "
                f"last: {result.skip_reasons[-1] if result.skip_reasons else 'unknown'}"
            )
        result.instances.append(instance)
        result.emitted += 1

    if result.skip_rate > config.skip_rate_threshold:
        raise GenerationError(
            f"skip rate {result.skip_rate:.3f} exceeds threshold "
            f"{config.skip_rate_threshold}; first reasons: "
            + " | ".join(result.skip_reasons[:5])
        )
    return result


def write_dataset_jsonl(result: DatasetResult, path) -> None:
    from .model import compact_json

    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for instance in result.instances:
            handle.write(compact_json(instance.to_json_dict()) + "\n")
