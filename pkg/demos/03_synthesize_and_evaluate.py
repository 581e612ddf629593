"""Generate training data, derive a labeled eval set, and score clients.

Run from the repo root:  python demos/03_synthesize_and_evaluate.py
"""

from pathlib import Path

from icaflow.clients import CorruptingClient, OracleEchoClient
from icaflow.evalharness import EvalConfig, compare_reports, derive_eval_dataset, run_eval
from icaflow.pools import load_pools
from icaflow.synth import generate_dataset

ROOT = Path(__file__).parent.parent

pools = load_pools(ROOT / "fixtures" / "pools")
print(f"Pools: {len(pools.intents)} intents, {len(pools.conditions)} conditions, "
      f"{len(pools.records)} query/context records")

# Every instance is built in three steps (sample a matched branch, graft
# divergent branches, derive the rationale) and then replayed from its own
# prompt text; instances whose replay disagrees with the label are
# discarded and regenerated.
result = generate_dataset(pools, 200, rng_seed=7)
print(f"Generated {result.emitted} instances "
      f"(skipped {result.skipped}, skip rate {result.skip_rate:.4f})\n")

sample = result.instances[0]
print("One instance, prompt side:")
print(sample.instruction)
print("Label side:")
print(sample.label)

# The same instances become a labeled eval set: the matched (workflow,
# action) is the gold label and the candidates are pinned in prompt order.
cases, kb = derive_eval_dataset([i.to_json_dict() for i in result.instances])
print(f"\nDerived {len(cases)} labeled cases over {len(kb.docs)} workflows")

arms = {
    "ica|cot": (OracleEchoClient(), EvalConfig(with_cot=True)),
    "ica|no-cot": (OracleEchoClient(), EvalConfig(with_cot=False)),
    "richtext|cot": (OracleEchoClient(), EvalConfig(with_cot=True, format="richtext")),
    "corrupt-0.3": (CorruptingClient(OracleEchoClient(), p=0.3, seed=1), EvalConfig()),
}
reports = {}
for arm, (client, config) in arms.items():
    reports[arm] = run_eval(cases, kb, client, config)
    print(f"{arm:<14} ACC={reports[arm].acc:.3f}  AL={reports[arm].al_seconds * 1000:.1f}ms")

table, _ = compare_reports(
    {k: reports[k] for k in ("richtext|cot", "ica|no-cot", "ica|cot")},
    baseline="richtext|cot",
)
print("\nComparison against the rich-text arm:")
print(table)
