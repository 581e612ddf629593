"""Interpreter semantics and brute-force oracle equivalence."""

import random

from icaflow.interpreter import FAILED, MATCHED, UNKNOWN, eval_condition, evaluate
from icaflow.model import (
    ConditionExpr,
    ConditionKind,
    ContextRecord,
    UserQuery,
)

from conftest import make_minimal_tree
from generators import random_context, random_query, random_tree
from oracles import brute_force_evaluate

QUERY = UserQuery("anything", intent_label="test-intent")


class TestEvalCondition:
    def test_equals_match(self):
        cond = ConditionExpr(kind=ConditionKind.EQUALS, key="status", value="canceled")
        outcome = eval_condition(cond, QUERY, ContextRecord({"status": "canceled"}))
        assert outcome.status == MATCHED

    def test_less_than_failure_reports_observed(self):
        cond = ConditionExpr(kind=ConditionKind.LESS_THAN, key="nights", value=3)
        outcome = eval_condition(cond, QUERY, ContextRecord({"nights": 5}))
        assert outcome.status == FAILED
        assert outcome.observed == 5

    def test_missing_key_is_unknown(self):
        cond = ConditionExpr(kind=ConditionKind.EQUALS, key="status", value="canceled")
        outcome = eval_condition(cond, QUERY, ContextRecord({}))
        assert outcome.status == UNKNOWN
        assert "status" in outcome.reason

    def test_exists_fails_definitively_when_absent(self):
        cond = ConditionExpr(kind=ConditionKind.EXISTS, key="coupon")
        assert eval_condition(cond, QUERY, ContextRecord({})).status == FAILED
        assert eval_condition(cond, QUERY, ContextRecord({"coupon": "X"})).status == MATCHED

    def test_type_mismatch_fails_with_reason(self):
        cond = ConditionExpr(kind=ConditionKind.LESS_THAN, key="nights", value=3)
        outcome = eval_condition(cond, QUERY, ContextRecord({"nights": "five"}))
        assert outcome.status == FAILED
        assert "type" in outcome.reason

    def test_bool_is_not_a_number(self):
        cond = ConditionExpr(kind=ConditionKind.EQUALS, key="flag", value=1)
        assert eval_condition(cond, QUERY, ContextRecord({"flag": True})).status == FAILED
        cond_bool = ConditionExpr(kind=ConditionKind.BOOLEAN_TRUE, key="flag")
        assert eval_condition(cond_bool, QUERY, ContextRecord({"flag": 1})).status == FAILED
        assert eval_condition(cond_bool, QUERY, ContextRecord({"flag": True})).status == MATCHED

    def test_intent_condition(self):
        cond = ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label="a")
        assert eval_condition(cond, UserQuery("q", intent_label="a"), ContextRecord()).status == MATCHED
        assert eval_condition(cond, UserQuery("q", intent_label="b"), ContextRecord()).status == FAILED
        assert eval_condition(cond, UserQuery("q"), ContextRecord()).status == UNKNOWN


class TestEvaluate:
    def test_minimal_match(self, minimal_tree):
        trace = evaluate([minimal_tree], QUERY, ContextRecord())
        assert trace.matched is not None
        assert trace.matched.action_id == 1
        assert [b.status for b in trace.branches] == [MATCHED]

    def test_no_intent_match_fails_every_root(self):
        trees = [make_minimal_tree(f"w{i}", f"intent-{i}") for i in range(3)]
        trace = evaluate(trees, UserQuery("q", intent_label="other"), ContextRecord())
        assert trace.matched is None
        assert len(trace.branches) == 3
        assert all(b.status == FAILED and b.path == (b.node_id,) for b in trace.branches)

    def test_first_match_wins_across_trees(self):
        first = make_minimal_tree("w1", "same")
        second = make_minimal_tree("w2", "same")
        trace = evaluate([first, second], UserQuery("q", intent_label="same"), ContextRecord())
        assert trace.matched.workflow_id == "w1"
        # the shadowed full match is still in the trace
        assert len(trace.matched_branches()) == 2

    def test_determinism(self):
        rng = random.Random(5)
        tree, _ = random_tree(rng)
        query, ctx = random_query(rng), random_context(rng)
        first = evaluate([tree], query, ctx)
        second = evaluate([tree], query, ctx)
        assert first.to_json_dict() == second.to_json_dict()


class TestOracleEquivalence:
    def _assert_agreement(self, trees, query, ctx):
        trace = evaluate(trees, query, ctx)
        oracle_matched, oracle_failing, oracle_full = brute_force_evaluate(trees, query, ctx)

        if oracle_matched is None:
            assert trace.matched is None
        else:
            assert trace.matched is not None
            assert (
                trace.matched.workflow_id,
                trace.matched.action_id,
                trace.matched.path,
            ) == oracle_matched

        ours_failing = {
            (b.workflow_id, b.node_id, b.status)
            for b in trace.branches
            if b.status != MATCHED
        }
        assert ours_failing == oracle_failing

        ours_full = [(b.workflow_id, b.node_id) for b in trace.matched_branches()]
        assert sorted(ours_full) == sorted(oracle_full)

    def test_1000_random_triples(self):
        rng = random.Random(42)
        for i in range(1000):
            tree, _ = random_tree(rng, max_depth=5, max_branching=4, workflow_id=f"w{i}")
            self._assert_agreement([tree], random_query(rng), random_context(rng))

    def test_multi_tree_candidates(self):
        rng = random.Random(43)
        for i in range(200):
            trees = [
                random_tree(rng, max_depth=4, max_branching=3, workflow_id=f"w{i}-{j}")[0]
                for j in range(rng.randint(1, 3))
            ]
            self._assert_agreement(trees, random_query(rng), random_context(rng))


class TestMonotoneContext:
    def _branch_keys(self, tree, path):
        """Keys the branch outcome depends on, including else-sibling deps."""
        keys = set()
        for node_id in path:
            payload = tree.nodes[node_id].payload
            if isinstance(payload, ConditionExpr) and payload.key:
                keys.add(payload.key)
            parent_id = tree.parent_of(node_id)
            if parent_id is not None:
                siblings = tree.nodes[parent_id].children
                for sibling in siblings[: siblings.index(node_id)]:
                    sib_payload = tree.nodes[sibling].payload
                    if isinstance(sib_payload, ConditionExpr) and sib_payload.key:
                        keys.add(sib_payload.key)
        return keys

    def test_adding_field_the_branch_ignores_keeps_it_matched(self):
        from generators import KEYS

        rng = random.Random(44)
        checked = 0
        attempts = 0
        while checked < 200 and attempts < 5000:
            attempts += 1
            tree, _ = random_tree(rng, max_depth=4, max_branching=3)
            query, ctx = random_query(rng), random_context(rng, key_probability=0.6)
            trace = evaluate([tree], query, ctx)
            if trace.matched is None:
                continue
            branch_keys = self._branch_keys(tree, trace.matched.path)
            free_keys = [k for k in KEYS if k not in branch_keys and k not in ctx.fields]
            if not free_keys:
                continue
            grown = ctx.with_field(rng.choice(free_keys), rng.choice([123, "zz", True]))
            regrown = evaluate([tree], query, grown)
            # the branch itself must still fully match (selection may shift
            # to an earlier branch that the new field completed)
            matched_paths = {b.path for b in regrown.matched_branches()}
            assert trace.matched.path in matched_paths
            checked += 1
        assert checked == 200
