"""Walk through the pseudocode format: parse, print, lint, evaluate.

Run from the repo root:  python demos/01_parse_and_run.py
"""

from pathlib import Path

from icaflow.interpreter import evaluate
from icaflow.lang import lint_ica, parse_ica, print_ica
from icaflow.model import ActionMap, ContextRecord, UserQuery

ROOT = Path(__file__).parent.parent

source = (ROOT / "fixtures" / "grammar_example.ica").read_text()
print("A workflow as its authors write it:\n")
print(source)

doc = parse_ica(source)
print(f"Parsed into {len(doc.tree.nodes)} nodes; intent = {doc.intent_label()!r}")

# The inline comments are only 60-char previews. The full action contents
# live in an action map; here we register them by hand.
actions = ActionMap(
    {
        ("refund-request", 1): "Issue a full refund to the original payment method.",
        ("refund-request", 2): "Offer a partial refund of the cleaning fee.",
    }
)

print("\nCanonical print (comments regenerated from the action map):\n")
print(print_ica(doc.tree, action_map=actions))

print("Lint warnings:", lint_ica(doc) or "none")

# Evaluate the same query under three different context records.
query = UserQuery("I want my money back", intent_label="refund-request")
for fields in (
    {"status": "canceled"},
    {"status": "active", "nights": 1},
    {"status": "active", "nights": 5},
):
    trace = evaluate([doc.tree], query, ContextRecord(fields))
    if trace.matched:
        outcome = f"take Action {trace.matched.action_id}"
    else:
        outcome = "no branch matches"
    print(f"\ncontext {fields} -> {outcome}")
    for branch in trace.branches:
        print(f"  [{branch.status}] node {branch.node_id}: {branch.reason or 'full match'}")
