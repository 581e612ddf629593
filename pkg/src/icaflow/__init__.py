"""Intent-Context-Action workflow toolchain.

Converts rich-text support workflows into an executable pseudocode form,
evaluates them deterministically against user queries and context data,
synthesizes chain-of-thought fine-tuning data from randomized decision
trees, and measures action-prediction accuracy and latency through a
pluggable LLM client.
"""

__version__ = "0.1.0"

from .model import (
    ActionMap,
    ActionRef,
    ConditionExpr,
    ConditionKind,
    ContextRecord,
    DecisionTree,
    ElseMarker,
    PendingAction,
    TreeBuilder,
    TreeNode,
    UserQuery,
    assign_action_ids,
    resolve_action,
    trees_equal,
    validate_tree,
)
from .lang import IcaDocument, ParseDiagnostic, lint_ica, parse_ica, print_ica, try_parse_ica
from .interpreter import EvalTrace, eval_condition, evaluate
from .retrieval import IntentIndex, build_index, retrieve

__all__ = [
    "ActionMap",
    "ActionRef",
    "ConditionExpr",
    "ConditionKind",
    "ContextRecord",
    "DecisionTree",
    "ElseMarker",
    "EvalTrace",
    "IcaDocument",
    "IntentIndex",
    "ParseDiagnostic",
    "PendingAction",
    "TreeBuilder",
    "TreeNode",
    "UserQuery",
    "assign_action_ids",
    "build_index",
    "eval_condition",
    "evaluate",
    "lint_ica",
    "parse_ica",
    "print_ica",
    "resolve_action",
    "retrieve",
    "trees_equal",
    "try_parse_ica",
    "validate_tree",
]
