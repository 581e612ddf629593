"""Convert a legacy rich-text workflow document into pseudocode.

Run from the repo root:  python demos/02_convert_html.py
"""

from pathlib import Path

from icaflow.ingest import classify_blocks, convert_document, extract_blocks

ROOT = Path(__file__).parent.parent
path = ROOT / "fixtures" / "html" / "workflow_05_damage_claim.html"
html = path.read_text()

print(f"Source document: {path.name}\n")

# Stage 1: decompose the HTML into text blocks, keeping the nesting.
blocks = extract_blocks(html)
print("Extracted blocks (depth mirrors the element tree):")
for block in blocks:
    print(f"  {'  ' * (block.depth - 1)}[{block.source_kind}] {block.text[:64]}")

# Stage 2: label each block as a condition or an action.
labels = classify_blocks(blocks)
flagged = [l for l in labels if l.confidence < 0.75]
print(f"\nLabels: {sum(l.label == 'condition' for l in labels)} condition(s), "
      f"{sum(l.label == 'action' for l in labels)} action(s); "
      f"{len(flagged)} low-confidence label(s) flagged for review")

# Stage 3: assemble the tree, number the actions, print the pseudocode.
result = convert_document(html, path.stem)
for wf in result.workflows:
    print(f"\n--- {wf.doc.workflow_id} ---")
    print(wf.doc.source_text)
    for warning in wf.warnings:
        print(f"review note: {warning}")

# The review report carries everything a human reviewer needs; `ica
# convert` writes it alongside the .ica files and actions.json.
report = result.review_report(path.name)
print(f"review report rows: {len(report['blocks'])}, "
      f"flagged: {sum(1 for row in report['blocks'] if row['flagged'])}")
