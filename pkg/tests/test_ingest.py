"""HTML ingestion: extraction, classification, assembly, conversion goldens."""

import json

import pytest

from icaflow.clients import CompletionResult, LlmClient
from icaflow.errors import IngestError, TransportError
from icaflow.ingest import (
    BlockLabel,
    ContentBlock,
    LlmClassifier,
    assemble_tree,
    classify_blocks,
    convert_document,
    extract_blocks,
    slugify,
)
from icaflow.lang import parse_ica
from icaflow.model import (
    ConditionExpr,
    ConditionKind,
    ElseMarker,
    PendingAction,
    assign_action_ids,
    validate_tree,
)


class TestExtractBlocks:
    def test_nested_list_nesting(self):
        blocks = extract_blocks("<ul><li>A<ul><li>B</li></ul></li></ul>")
        assert [(b.text, b.depth, b.parent_block_id) for b in blocks] == [
            ("A", 1, None),
            ("B", 2, blocks[0].block_id),
        ]

    def test_two_by_two_table_with_headers(self):
        html = (
            "<table><tr><th></th><th>Col1</th></tr>"
            "<tr><th>Row1</th><td>V</td></tr></table>"
        )
        blocks = extract_blocks(html)
        assert len(blocks) == 1
        assert blocks[0].text == "Row1 / Col1: V"
        assert blocks[0].source_kind == "table-cell"

    def test_attribute_order_and_whitespace_insensitive(self):
        one = extract_blocks('<ul>\n  <li class="a" id="b">Item</li>\n</ul>')
        two = extract_blocks('<ul><li id="b" class="a">Item</li></ul>')
        strip = lambda bs: [(b.text, b.depth, b.source_kind) for b in bs]
        assert strip(one) == strip(two)

    def test_unclosed_tags_repaired(self):
        blocks = extract_blocks("<ul><li>first<li>second</ul><p>para one<p>para two")
        assert [b.text for b in blocks] == ["first", "second", "para one", "para two"]

    def test_empty_document(self):
        assert extract_blocks("") == []
        assert extract_blocks("<html><body></body></html>") == []

    def test_inline_markup_merges_into_text(self):
        blocks = extract_blocks("<p>Hello <b>bold</b> and <i>slanted</i> text</p>")
        assert blocks[0].text == "Hello bold and slanted text"

    def test_headings_nest_by_level(self):
        blocks = extract_blocks("<h1>Top</h1><h2>Sub</h2><p>Body</p><h1>Second</h1>")
        by_text = {b.text: b for b in blocks}
        assert by_text["Top"].depth == 1
        assert by_text["Sub"].parent_block_id == by_text["Top"].block_id
        assert by_text["Body"].parent_block_id == by_text["Sub"].block_id
        assert by_text["Second"].depth == 1

    def test_golden_blocks_for_first_fixture(self, html_dir, fixtures_dir):
        html = (html_dir / "workflow_01_cancellation.html").read_text()
        blocks = [b.to_json_dict() for b in extract_blocks(html)]
        golden = json.loads((fixtures_dir / "golden_blocks_01.json").read_text())
        assert blocks == golden

    def test_no_content_loss_on_fixture_corpus(self, html_dir):
        """Every non-table text chunk lands in exactly one block."""
        import re

        for path in sorted(html_dir.glob("*.html")):
            html = path.read_text()
            blocks = extract_blocks(html)
            joined = "\n".join(b.text for b in blocks)
            body = html.split("<body>")[1].split("</body>")[0]
            body = re.sub(r"<table>.*?</table>", " ", body, flags=re.S)
            body = re.sub(r"<[^>]+>", "\n", body)
            for chunk in body.split("\n"):
                chunk = " ".join(chunk.split())
                if chunk:
                    assert joined.count(chunk) >= 1, (path.name, chunk)
            # non-table chunks must not be duplicated
            for block in blocks:
                if block.source_kind != "table-cell":
                    assert joined.count(block.text) == 1 or len(block.text) < 12


class TestClassify:
    def test_conditional_marker(self):
        blocks = [
            ContentBlock("b1", "If the reservation is canceled within 24 hours", 1, None, "list-item")
        ]
        (label,) = classify_blocks(blocks)
        assert label.label == "condition"
        assert label.confidence >= 0.9

    def test_imperative_verb(self):
        blocks = [ContentBlock("b1", "Issue a full refund to the guest", 1, None, "list-item")]
        (label,) = classify_blocks(blocks)
        assert label.label == "action"

    def test_empty_list(self):
        assert classify_blocks([]) == []

    def test_colon_with_children_beats_imperative(self):
        blocks = [
            ContentBlock("b1", "Check the following:", 1, None, "paragraph"),
            ContentBlock("b2", "anything", 2, "b1", "list-item"),
        ]
        labels = classify_blocks(blocks)
        assert labels[0].label == "condition"

    def test_default_label_is_flagged_low_confidence(self):
        blocks = [ContentBlock("b1", "Miscellaneous notes", 1, None, "paragraph")]
        (label,) = classify_blocks(blocks)
        assert label.label == "action"
        assert label.confidence == 0.5

    def test_llm_classifier_parses_answers(self):
        class OneWord(LlmClient):
            def complete(self, prompt, max_output_tokens=8, timeout=30.0):
                word = "condition" if "If " in prompt else "action"
                return CompletionResult(text=word, latency_seconds=0.001)

        blocks = [
            ContentBlock("b1", "If it rains", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 1, None, "list-item"),
        ]
        labels = LlmClassifier(OneWord()).classify(blocks)
        assert [l.label for l in labels] == ["condition", "action"]

    def test_llm_classifier_propagates_failures_with_block_id(self):
        class Broken(LlmClient):
            def complete(self, prompt, max_output_tokens=8, timeout=30.0):
                raise TransportError("llm-client", "boom")

        blocks = [ContentBlock("b7", "If it rains", 1, None, "list-item")]
        with pytest.raises(TransportError, match="b7"):
            LlmClassifier(Broken()).classify(blocks)


class TestAssembleTree:
    def _label(self, block_id, label):
        return BlockLabel(block_id, label, 0.9)

    def test_condition_then_action(self):
        blocks = [
            ContentBlock("b1", "If it rains", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 2, "b1", "list-item"),
        ]
        labels = [self._label("b1", "condition"), self._label("b2", "action")]
        result = assemble_tree(blocks, labels, "weather-help")
        tree = result.tree
        root = tree.nodes[tree.root]
        assert isinstance(root.payload, ConditionExpr)
        (cond_id,) = root.children
        cond = tree.nodes[cond_id]
        assert cond.payload.kind is ConditionKind.BOOLEAN_TRUE
        (leaf_id,) = cond.children
        assert isinstance(tree.nodes[leaf_id].payload, PendingAction)
        assert result.warnings == []

    def test_action_without_condition_warns(self):
        blocks = [ContentBlock("b1", "Send an umbrella", 1, None, "list-item")]
        result = assemble_tree(blocks, [self._label("b1", "action")], "weather-help")
        assert any("no governing condition" in w for w in result.warnings)
        root = result.tree.nodes[result.tree.root]
        assert len(root.children) == 1

    def test_consecutive_actions_merge(self):
        blocks = [
            ContentBlock("b1", "If it rains", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 2, "b1", "list-item"),
            ContentBlock("b3", "Log the weather", 2, "b1", "list-item"),
        ]
        labels = [
            self._label("b1", "condition"),
            self._label("b2", "action"),
            self._label("b3", "action"),
        ]
        tree = assemble_tree(blocks, labels, "weather-help").tree
        leaves = [n for n in tree.nodes.values() if isinstance(n.payload, PendingAction)]
        assert len(leaves) == 1
        assert leaves[0].payload.text == "Send an umbrella\nLog the weather"

    def test_no_actions_is_an_error(self):
        blocks = [ContentBlock("b1", "If it rains", 1, None, "list-item")]
        with pytest.raises(IngestError, match="no actions"):
            assemble_tree(blocks, [self._label("b1", "condition")], "weather-help")

    def test_childless_condition_pruned_with_warning(self):
        blocks = [
            ContentBlock("b1", "If it rains", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 2, "b1", "list-item"),
            ContentBlock("b3", "If it snows", 1, None, "list-item"),
        ]
        labels = [
            self._label("b1", "condition"),
            self._label("b2", "action"),
            self._label("b3", "condition"),
        ]
        result = assemble_tree(blocks, labels, "weather-help")
        assert any("dropped" in w for w in result.warnings)
        numbered, _ = assign_action_ids(result.tree)
        assert validate_tree(numbered) == []

    def test_otherwise_becomes_else(self):
        blocks = [
            ContentBlock("b1", "If it rains", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 2, "b1", "list-item"),
            ContentBlock("b3", "Otherwise", 1, None, "list-item"),
            ContentBlock("b4", "Do nothing", 2, "b3", "list-item"),
        ]
        labels = [
            self._label("b1", "condition"),
            self._label("b2", "action"),
            self._label("b3", "condition"),
            self._label("b4", "action"),
        ]
        tree = assemble_tree(blocks, labels, "weather-help").tree
        kinds = [type(n.payload).__name__ for n in tree.nodes.values()]
        assert "ElseMarker" in kinds

    def test_leading_otherwise_falls_back_to_condition(self):
        blocks = [
            ContentBlock("b1", "Otherwise do things", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 2, "b1", "list-item"),
        ]
        labels = [self._label("b1", "condition"), self._label("b2", "action")]
        result = assemble_tree(blocks, labels, "weather-help")
        assert any("plain condition" in w for w in result.warnings)
        assert not any(
            isinstance(n.payload, ElseMarker) for n in result.tree.nodes.values()
        )

    def test_slug_collisions_get_suffixes(self):
        blocks = [
            ContentBlock("b1", "If it rains", 1, None, "list-item"),
            ContentBlock("b2", "Send an umbrella", 2, "b1", "list-item"),
            ContentBlock("b3", "If it rains", 1, None, "list-item"),
            ContentBlock("b4", "Stay inside", 2, "b3", "list-item"),
        ]
        labels = [
            self._label("b1", "condition"),
            self._label("b2", "action"),
            self._label("b3", "condition"),
            self._label("b4", "action"),
        ]
        tree = assemble_tree(blocks, labels, "weather-help").tree
        keys = sorted(
            n.payload.key
            for n in tree.nodes.values()
            if isinstance(n.payload, ConditionExpr) and n.payload.key
        )
        assert keys == ["it_rains", "it_rains_2"]

    def test_slugify(self):
        assert slugify("If the reservation is canceled") == "reservation_is_canceled"
        assert slugify("Claim routing") == "claim_routing"
        assert slugify("!!!") == "block"


class TestConvertDocument:
    def test_multi_heading_split(self, html_dir):
        html = (html_dir / "workflow_06_noise.html").read_text()
        result = convert_document(html, "workflow_06_noise")
        assert result.split_by_heading
        ids = [wf.doc.workflow_id for wf in result.workflows]
        assert ids == [
            "workflow_06_noise--noise-complaints-from-neighbors",
            "workflow_06_noise--repeated-party-reports",
        ]
        report = result.review_report("workflow_06_noise.html")
        assert report["split_by_heading"] is True

    def test_preamble_blocks_are_skipped_and_reported(self, html_dir):
        html = (html_dir / "workflow_04_account_access.html").read_text()
        result = convert_document(html, "workflow_04_account_access")
        assert result.skipped_blocks  # the pre-heading paragraph
        report = result.review_report("workflow_04_account_access.html")
        assert report["skipped_blocks"] == result.skipped_blocks

    def test_review_report_flags_low_confidence(self, html_dir):
        html = (html_dir / "workflow_05_damage_claim.html").read_text()
        result = convert_document(html, "workflow_05_damage_claim")
        report = result.review_report("workflow_05_damage_claim.html")
        flagged = [row for row in report["blocks"] if row["flagged"]]
        assert flagged

    def test_end_to_end_fixture_corpus_parses_and_validates(self, html_dir):
        for path in sorted(html_dir.glob("*.html")):
            result = convert_document(path.read_text(), path.stem)
            for wf in result.workflows:
                reparsed = parse_ica(
                    wf.doc.source_text,
                    workflow_id=wf.doc.workflow_id,
                    action_map=result.action_map,
                )
                assert validate_tree(reparsed.tree, result.action_map) == []
                # printing is a fixed point
                from icaflow.lang import print_ica

                again = print_ica(reparsed.tree, action_map=result.action_map)
                assert again == wf.doc.source_text

    def test_determinism(self, html_dir):
        html = (html_dir / "workflow_01_cancellation.html").read_text()
        one = convert_document(html, "x")
        two = convert_document(html, "x")
        assert [w.doc.source_text for w in one.workflows] == [
            w.doc.source_text for w in two.workflows
        ]
        assert one.action_map.to_json_dict() == two.action_map.to_json_dict()

    def test_golden_kb_reproduced_byte_exactly(self, html_dir, golden_kb_dir, tmp_path):
        from click.testing import CliRunner

        from icaflow.cli import main

        runner = CliRunner()
        out = tmp_path / "kb"
        result = runner.invoke(
            main, ["convert", str(html_dir), "--out", str(out)], catch_exceptions=False
        )
        assert result.exit_code == 0, result.output
        golden_files = sorted(p.name for p in golden_kb_dir.iterdir())
        built_files = sorted(p.name for p in out.iterdir())
        assert built_files == golden_files
        for name in golden_files:
            assert (out / name).read_bytes() == (golden_kb_dir / name).read_bytes(), name
