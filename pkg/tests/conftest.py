"""Shared fixtures: repo paths, fixture pools, and small helper trees."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
REPO_ROOT = TESTS_DIR.parent
FIXTURES = REPO_ROOT / "fixtures"

sys.path.insert(0, str(TESTS_DIR))  # make oracles/generators importable

from icaflow.model import (  # noqa: E402
    ActionMap,
    ActionRef,
    ConditionExpr,
    ConditionKind,
    DecisionTree,
    TreeNode,
)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def html_dir() -> Path:
    return FIXTURES / "html"


@pytest.fixture(scope="session")
def pools_dir() -> Path:
    return FIXTURES / "pools"


@pytest.fixture(scope="session")
def golden_kb_dir() -> Path:
    return FIXTURES / "golden_kb"


@pytest.fixture(scope="session")
def pools():
    from icaflow.pools import load_pools

    return load_pools(FIXTURES / "pools")


def make_minimal_tree(workflow_id: str = "w1", intent: str = "test-intent") -> DecisionTree:
    """Root intent with a single Action 1 leaf."""
    return DecisionTree(
        workflow_id=workflow_id,
        nodes={
            "n1": TreeNode(
                node_id="n1",
                payload=ConditionExpr(kind=ConditionKind.INTENT_LABEL, intent_label=intent),
                children=("n2",),
                description="minimal",
            ),
            "n2": TreeNode(node_id="n2", payload=ActionRef(1)),
        },
        root="n1",
    )


@pytest.fixture
def minimal_tree() -> DecisionTree:
    return make_minimal_tree()


@pytest.fixture
def minimal_map() -> ActionMap:
    return ActionMap({("w1", 1): "do the one thing"})
