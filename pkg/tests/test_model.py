"""Core model: validation, id assignment, resolution, serialization."""

import random

import pytest

from icaflow.errors import ActionNotFoundError, TreeStructureError
from icaflow.model import (
    ActionMap,
    ActionRef,
    ConditionExpr,
    ConditionKind,
    ContextRecord,
    DecisionTree,
    PendingAction,
    TreeBuilder,
    TreeNode,
    assign_action_ids,
    resolve_action,
    scalar_kind,
    tree_from_json_dict,
    tree_to_json_dict,
    trees_equal,
    validate_tree,
)

from conftest import make_minimal_tree
from generators import random_tree
from oracles import tree_is_structurally_valid


def _codes(violations):
    return {v.code for v in violations}


class TestValidateTree:
    def test_minimal_valid_tree(self, minimal_tree):
        assert validate_tree(minimal_tree) == []

    def test_single_action_root_is_invalid(self):
        tree = DecisionTree(
            workflow_id="w",
            nodes={"n1": TreeNode(node_id="n1", payload=ActionRef(1))},
            root="n1",
        )
        assert "bad-root" in _codes(validate_tree(tree))

    def test_duplicate_action_ids_with_distinct_contents(self):
        builder = TreeBuilder("w")
        root = builder.add(ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label="x"))
        builder.add(ActionRef(1), parent=root)
        builder.add(ActionRef(1), parent=root)
        assert "duplicate-action-id" in _codes(validate_tree(builder.build()))

    def test_orphan_node_reported(self, minimal_tree):
        nodes = dict(minimal_tree.nodes)
        nodes["stray"] = TreeNode(node_id="stray", payload=ActionRef(2))
        tree = DecisionTree(workflow_id="w1", nodes=nodes, root="n1")
        assert "unreachable" in _codes(validate_tree(tree))

    def test_cycle_reported(self):
        nodes = {
            "n1": TreeNode(
                node_id="n1",
                payload=ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label="x"),
                children=("n2",),
            ),
            "n2": TreeNode(
                node_id="n2",
                payload=ConditionExpr(kind=ConditionKind.EXISTS, key="k"),
                children=("n1",),
            ),
        }
        tree = DecisionTree(workflow_id="w", nodes=nodes, root="n1")
        codes = _codes(validate_tree(tree))
        assert codes & {"cycle", "root-has-parent"}

    def test_unresolvable_action_against_map(self, minimal_tree):
        empty = ActionMap()
        assert "unresolvable-action" in _codes(validate_tree(minimal_tree, empty))
        full = ActionMap({("w1", 1): "content"})
        assert validate_tree(minimal_tree, full) == []

    def test_else_needs_earlier_condition(self):
        from icaflow.model import ElseMarker

        builder = TreeBuilder("w")
        root = builder.add(ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label="x"))
        else_node = builder.add(ElseMarker(), parent=root)
        builder.add(ActionRef(1), parent=else_node)
        assert "dangling-else" in _codes(validate_tree(builder.build()))

    def test_matches_independent_structural_verifier_on_random_trees(self):
        rng = random.Random(11)
        for i in range(300):
            tree, _ = random_tree(rng, max_depth=4, max_branching=3, workflow_id=f"w{i}")
            assert validate_tree(tree) == []
            assert tree_is_structurally_valid(tree)

    def test_matches_verifier_on_mutated_trees(self):
        rng = random.Random(12)
        for i in range(200):
            tree, _ = random_tree(rng, max_depth=4, max_branching=3, workflow_id=f"w{i}")
            nodes = dict(tree.nodes)
            mutation = rng.choice(["drop-node", "dup-action", "orphan", "bad-root"])
            node_ids = sorted(nodes)
            if mutation == "drop-node":
                victim = rng.choice([n for n in node_ids if n != tree.root])
                del nodes[victim]
            elif mutation == "dup-action":
                leaves = [n for n in nodes.values() if isinstance(n.payload, ActionRef)]
                victim = rng.choice(leaves)
                nodes[victim.node_id] = TreeNode(
                    node_id=victim.node_id, payload=ActionRef(1), children=()
                )
                if len(leaves) == 1:
                    continue  # single leaf stays id 1: no duplicate introduced
            elif mutation == "orphan":
                nodes["orphan"] = TreeNode(node_id="orphan", payload=ActionRef(99))
            else:
                nodes[tree.root] = TreeNode(
                    node_id=tree.root,
                    payload=ConditionExpr(kind=ConditionKind.EXISTS, key="k"),
                    children=nodes[tree.root].children,
                )
            mutated = DecisionTree(workflow_id=tree.workflow_id, nodes=nodes, root=tree.root)
            ours = validate_tree(mutated) == []
            theirs = tree_is_structurally_valid(mutated)
            assert ours == theirs


class TestAssignActionIds:
    def _pending_tree(self, texts):
        builder = TreeBuilder("w")
        root = builder.add(ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label="x"))
        cond = builder.add(
            ConditionExpr(kind=ConditionKind.EXISTS, key="k"), parent=root
        )
        builder.add(PendingAction(texts[0]), parent=cond)
        for text in texts[1:]:
            builder.add(PendingAction(text), parent=root)
        return builder.build()

    def test_preorder_numbering(self):
        tree = self._pending_tree(["A", "B", "C"])
        numbered, action_map = assign_action_ids(tree)
        ids = [
            n.payload.action_id
            for n in numbered.preorder()
            if isinstance(n.payload, ActionRef)
        ]
        assert ids == [1, 2, 3]
        assert action_map.entries == {("w", 1): "A", ("w", 2): "B", ("w", 3): "C"}

    def test_single_leaf(self):
        numbered, action_map = assign_action_ids(self._pending_tree(["only"]))
        assert action_map.entries == {("w", 1): "only"}

    def test_identical_texts_get_distinct_ids(self):
        numbered, action_map = assign_action_ids(self._pending_tree(["escalate", "escalate"]))
        assert action_map.get("w", 1) == "escalate"
        assert action_map.get("w", 2) == "escalate"
        # positional numbering confirmed against an explicit traversal
        order = [
            n.node_id for n in numbered.preorder() if isinstance(n.payload, ActionRef)
        ]
        assert [numbered.nodes[n].payload.action_id for n in order] == [1, 2]

    def test_deterministic(self):
        tree = self._pending_tree(["A", "B"])
        first = assign_action_ids(tree)
        second = assign_action_ids(tree)
        assert trees_equal(first[0], second[0])
        assert first[1].to_json_dict() == second[1].to_json_dict()

    def test_rejects_invalid_tree(self):
        tree = DecisionTree(
            workflow_id="w",
            nodes={"n1": TreeNode(node_id="n1", payload=PendingAction("x"))},
            root="n1",
        )
        with pytest.raises(TreeStructureError):
            assign_action_ids(tree)

    def test_rejects_already_numbered(self, minimal_tree):
        with pytest.raises(TreeStructureError):
            assign_action_ids(minimal_tree)

    def test_roundtrip_resolution_over_random_trees(self):
        rng = random.Random(13)
        for i in range(100):
            builder = TreeBuilder(f"w{i}")
            root = builder.add(
                ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label="x")
            )
            texts = [f"text {rng.randint(0, 5)}" for _ in range(rng.randint(1, 6))]
            for text in texts:
                builder.add(PendingAction(text), parent=root)
            numbered, action_map = assign_action_ids(builder.build())
            for node in numbered.leaves():
                content = resolve_action(
                    action_map, numbered.workflow_id, node.payload.action_id
                )
                original_index = node.payload.action_id - 1
                assert content == texts[original_index]


class TestResolveAction:
    def test_hit(self):
        action_map = ActionMap({("w1", 1): "refund guest"})
        assert resolve_action(action_map, "w1", 1) == "refund guest"

    def test_miss_carries_both_keys(self):
        action_map = ActionMap({("w1", 1): "refund guest"})
        with pytest.raises(ActionNotFoundError) as excinfo:
            resolve_action(action_map, "w1", 2)
        assert excinfo.value.workflow_id == "w1"
        assert excinfo.value.action_id == 2


class TestSerialization:
    def test_tree_json_roundtrip_random(self):
        rng = random.Random(14)
        for i in range(100):
            tree, _ = random_tree(rng, max_depth=4, max_branching=3, workflow_id=f"w{i}")
            clone = tree_from_json_dict(tree_to_json_dict(tree))
            assert trees_equal(tree, clone)
            assert clone.workflow_id == tree.workflow_id

    def test_action_map_json_roundtrip(self):
        action_map = ActionMap({("a", 1): "x", ("a", 2): "y", ("b", 1): "z"})
        clone = ActionMap.from_json_dict(action_map.to_json_dict())
        assert clone.entries == action_map.entries

    def test_context_record_rejects_non_scalars(self):
        with pytest.raises(TypeError):
            ContextRecord({"bad": [1, 2]})

    def test_scalar_kind_distinguishes_bool_from_number(self):
        assert scalar_kind(True) == "bool"
        assert scalar_kind(1) == "number"
        assert scalar_kind(1.5) == "number"
        assert scalar_kind("1") == "text"


class TestTreesEqual:
    def test_equal_ignores_node_ids(self, minimal_tree):
        renamed_nodes = {}
        mapping = {"n1": "a", "n2": "b"}
        for node_id, node in minimal_tree.nodes.items():
            renamed_nodes[mapping[node_id]] = TreeNode(
                node_id=mapping[node_id],
                payload=node.payload,
                children=tuple(mapping[c] for c in node.children),
                description=node.description,
            )
        renamed = DecisionTree(workflow_id="w1", nodes=renamed_nodes, root="a")
        assert trees_equal(minimal_tree, renamed)

    def test_description_differences_matter(self, minimal_tree):
        other = make_minimal_tree()
        nodes = dict(other.nodes)
        nodes["n1"] = TreeNode(
            node_id="n1",
            payload=nodes["n1"].payload,
            children=nodes["n1"].children,
            description="changed",
        )
        changed = DecisionTree(workflow_id="w1", nodes=nodes, root="n1")
        assert not trees_equal(minimal_tree, changed)
