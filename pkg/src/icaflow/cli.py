"""Command-line entry point: one binary wiring every pipeline stage.

Exit codes: 0 success, 1 domain errors (validation, generation, transport),
2 usage errors.  ``--json-errors`` switches stderr to machine-readable
error objects for scripting.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .clients import CorruptingClient, HttpChatClient, LlmClient, OracleEchoClient
from .config import Config, load_config
from .errors import IcaError, IcaParseError
from .evalharness import (
    EvalConfig,
    derive_eval_dataset,
    load_dataset,
    load_instances_jsonl,
    run_eval,
    save_dataset,
)
from .ingest import LlmClassifier, RuleBasedClassifier, convert_document
from .interpreter import evaluate
from .kb import load_kb, save_kb
from .lang import lint_ica, parse_ica, try_parse_ica
from .model import ActionMap, ContextRecord, UserQuery, canonical_json
from .pools import load_pools
from .predict import FileContextProvider, StaticContextProvider, predict
from .retrieval import build_index, retrieve
from .synth import SynthConfig, generate_dataset, write_dataset_jsonl

logger = logging.getLogger("icaflow")


def _make_client(config: Config, seed: int) -> LlmClient:
    if config.client == "mock":
        return OracleEchoClient()
    if config.client == "corrupt":
        return CorruptingClient(OracleEchoClient(), p=config.corrupt_p, seed=seed)
    return HttpChatClient(endpoint=config.endpoint, model=config.model)


def _synth_config(config: Config, max_tokens: int | None = None) -> SynthConfig:
    return SynthConfig(
        max_branch_depth=config.max_branch_depth,
        min_divergent=config.min_divergent,
        max_divergent=config.max_divergent,
        max_trees=config.max_trees,
        min_mismatch_nodes=config.min_mismatch_nodes,
        skip_rate_threshold=config.skip_rate_threshold,
        token_budget=max_tokens or config.prompt_token_budget,
    )


@click.group()
@click.version_option(__version__, prog_name="ica")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Config file.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for synth, derive-eval, and the corrupting mock client.")
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.option("--json-errors", is_flag=True, help="Emit errors as JSON on stderr.")
@click.pass_context
def main(ctx, config_path, seed, log_level, json_errors):
    """Workflow pseudocode toolchain: convert, execute, synthesize, evaluate."""
    logging.basicConfig(level=getattr(logging, log_level.upper()))
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_path)
    ctx.obj["seed"] = seed
    ctx.obj["json_errors"] = json_errors


def _fail(ctx, exc: IcaError) -> None:
    if ctx.obj.get("json_errors"):
        payload = {"error": type(exc).__name__, "message": str(exc)}
        click.echo(json.dumps(payload, sort_keys=True), err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(1)


def _guard(ctx, func):
    try:
        return func()
    except IcaError as exc:
        _fail(ctx, exc)


def _load_query(value: str | None) -> UserQuery:
    """Accept either a path to a query JSON file or raw query text."""
    if not value:
        raise click.UsageError("provide --query (q.json or raw text)")
    path = Path(value)
    if value.endswith(".json") or path.exists():
        data = json.loads(path.read_text("utf-8"))
        return UserQuery.from_json_dict(data)
    return UserQuery(value)


def _load_context(path: str | None) -> ContextRecord:
    if not path:
        return ContextRecord()
    return ContextRecord(dict(json.loads(Path(path).read_text("utf-8"))))


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--classifier", type=click.Choice(["rules", "llm"]), default="rules",
              show_default=True)
@click.pass_context
def convert(ctx, inputs, out_dir, classifier):
    """Convert rich-text HTML workflow documents to pseudocode."""

    def body():
        config: Config = ctx.obj["config"]
        if classifier == "llm":
            chosen = LlmClassifier(_make_client(config, ctx.obj["seed"]))
        else:
            chosen = RuleBasedClassifier()
        paths: list[Path] = []
        for item in inputs:
            path = Path(item)
            paths.extend(sorted(path.glob("*.html")) if path.is_dir() else [path])
        if not paths:
            raise IcaError("no input .html files")

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        combined = ActionMap()
        reports = []
        n_workflows = 0
        for path in paths:
            result = convert_document(path.read_text("utf-8"), path.stem, chosen)
            combined.merge(result.action_map)
            reports.append(result.review_report(path.name))
            for wf in result.workflows:
                (out / f"{wf.doc.workflow_id}.ica").write_text(wf.doc.source_text, "utf-8")
                n_workflows += 1
        (out / "actions.json").write_text(canonical_json(combined.to_json_dict()), "utf-8")
        (out / "review_report.json").write_text(canonical_json({"documents": reports}), "utf-8")
        click.echo(f"converted {len(paths)} document(s) into {n_workflows} workflow(s) -> {out}")

    _guard(ctx, body)


@main.command()
@click.argument("file", type=click.Path(exists=True))
@click.option("--actions", "actions_path", type=click.Path(exists=True), default=None)
@click.pass_context
def lint(ctx, file, actions_path):
    """Parse a .ica file and report grammar errors and lint warnings."""

    def body():
        action_map = None
        if actions_path:
            action_map = ActionMap.from_json_dict(
                json.loads(Path(actions_path).read_text("utf-8"))
            )
        text = Path(file).read_text("utf-8")
        doc, diagnostics = try_parse_ica(text, workflow_id=Path(file).stem, action_map=action_map)
        for diagnostic in diagnostics:
            click.echo(f"{file}:{diagnostic}")
        if doc is None:
            raise IcaParseError([d for d in diagnostics if d.severity == "error"])
        for warning in lint_ica(doc):
            click.echo(f"{file}: warning: {warning}")
        click.echo(f"{file}: ok ({len(doc.tree.nodes)} nodes)")

    _guard(ctx, body)


@main.command()
@click.argument("file", type=click.Path(exists=True))
@click.option("--query", "query_value", required=True,
              help="Query JSON file ({text, intent_label?}) or raw query text.")
@click.option("--context", "context_path", type=click.Path(exists=True), default=None,
              help="Context record JSON.")
@click.option("--actions", "actions_path", type=click.Path(exists=True), default=None)
@click.pass_context
def run(ctx, file, query_value, context_path, actions_path):
    """Evaluate one workflow against a query and context; print the trace."""

    def body():
        action_map = None
        if actions_path:
            action_map = ActionMap.from_json_dict(
                json.loads(Path(actions_path).read_text("utf-8"))
            )
        doc = parse_ica(
            Path(file).read_text("utf-8"), workflow_id=Path(file).stem, action_map=action_map
        )
        query = _load_query(query_value)
        if query.intent_label is None:
            query = query.with_intent(doc.intent_label())
        ctx_record = _load_context(context_path)
        trace = evaluate([doc.tree], query, ctx_record)
        output = trace.to_json_dict()
        if trace.matched is not None:
            content = doc.action_content(trace.matched.action_id)
            output["action_content"] = content
        click.echo(json.dumps(output, indent=2, sort_keys=True))

    _guard(ctx, body)


@main.command()
@click.option("--pools", "pools_dir", required=True, type=click.Path(exists=True))
@click.option("--n", "n_instances", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Overrides the global --seed.")
@click.option("--max-tokens", type=int, default=None, help="Prompt token budget.")
@click.pass_context
def synth(ctx, pools_dir, n_instances, out_path, seed, max_tokens):
    """Generate verified chain-of-thought fine-tuning instances (JSONL)."""

    def body():
        config: Config = ctx.obj["config"]
        pools = load_pools(pools_dir)
        effective_seed = seed if seed is not None else ctx.obj["seed"]
        result = generate_dataset(
            pools, n_instances, effective_seed, _synth_config(config, max_tokens)
        )
        write_dataset_jsonl(result, out_path)
        click.echo(
            f"wrote {result.emitted} instance(s) to {out_path} "
            f"(skipped {result.skipped}, skip rate {result.skip_rate:.4f})"
        )

    _guard(ctx, body)


@main.command(name="retrieve")
@click.option("--index", "kb_dir", required=True, type=click.Path(exists=True),
              help="Knowledge-base directory to index.")
@click.option("--query", "query_text", required=True)
@click.option("-k", type=int, default=3, show_default=True)
@click.pass_context
def retrieve_cmd(ctx, kb_dir, query_text, k):
    """Rank workflows by intent affinity to a query."""

    def body():
        kb = load_kb(kb_dir)
        index = build_index(kb.docs, kb.aliases)
        ranking = retrieve(index, query_text, k=k)
        click.echo(
            json.dumps(
                {
                    "query": query_text,
                    "results": [
                        {"workflow_id": wf, "score": round(score, 6)} for wf, score in ranking
                    ],
                    "no_intent_match": not ranking,
                },
                indent=2,
                sort_keys=True,
            )
        )

    _guard(ctx, body)


@main.command(name="predict")
@click.option("--kb", "kb_dir", required=True, type=click.Path(exists=True))
@click.option("--query", "query_text", required=True)
@click.option("--client", "client_name", type=click.Choice(["mock", "corrupt", "http"]),
              default=None, help="Override the configured client.")
@click.option("--cot/--no-cot", default=True, show_default=True)
@click.option("--context-file", type=click.Path(exists=True), default=None,
              help="Context-provider JSON file keyed by query text.")
@click.option("-k", type=int, default=None, help="Candidates to retrieve.")
@click.pass_context
def predict_cmd(ctx, kb_dir, query_text, client_name, cot, context_file, k):
    """Predict the action for a query against a knowledge base."""

    def body():
        config: Config = ctx.obj["config"]
        if client_name:
            config.client = client_name
            config.validate()
        kb = load_kb(kb_dir)
        index = build_index(kb.docs, kb.aliases)
        provider = FileContextProvider(context_file) if context_file else StaticContextProvider()
        client = _make_client(config, ctx.obj["seed"])
        prediction = predict(
            query_text,
            provider,
            index,
            kb.docs,
            kb.action_map,
            client,
            k=k or config.retrieval_k,
            with_cot=cot,
            token_budget=config.prompt_token_budget,
            max_output_tokens=config.max_output_tokens,
            timeout=config.client_timeout,
        )
        click.echo(json.dumps(prediction.to_json_dict(), indent=2, sort_keys=True))

    _guard(ctx, body)


@main.command()
@click.option("--kb", "kb_dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--client", "client_name", type=click.Choice(["mock", "corrupt", "http"]),
              default=None)
@click.option("--max-in-flight", type=int, default=8, show_default=True)
@click.pass_context
def serve(ctx, kb_dir, host, port, client_name, max_in_flight):
    """Serve predictions over HTTP (POST /v1/predict, GET /healthz)."""

    def body():
        import uvicorn

        from .service import create_app

        config: Config = ctx.obj["config"]
        if client_name:
            config.client = client_name
            config.validate()
        kb = load_kb(kb_dir)
        app = create_app(
            kb,
            _make_client(config, ctx.obj["seed"]),
            k=config.retrieval_k,
            max_in_flight=max_in_flight,
            token_budget=config.prompt_token_budget,
            max_output_tokens=config.max_output_tokens,
            timeout=config.client_timeout,
        )
        uvicorn.run(app, host=host, port=port, log_level="warning")

    _guard(ctx, body)


@main.command()
@click.option("--kb", "kb_dir", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--client", "client_name", type=click.Choice(["mock", "corrupt", "http"]),
              default=None)
@click.option("--cot/--no-cot", default=True, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["ica", "richtext"]), default="ica",
              show_default=True)
@click.option("--concurrency", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Report JSON path.")
@click.pass_context
def eval(ctx, kb_dir, data_path, client_name, cot, fmt, concurrency, out_path):
    """Measure action-prediction accuracy and latency over a labeled set."""

    def body():
        config: Config = ctx.obj["config"]
        if client_name:
            config.client = client_name
            config.validate()
        kb = load_kb(kb_dir)
        dataset = load_dataset(data_path)
        client = _make_client(config, ctx.obj["seed"])
        report = run_eval(
            dataset,
            kb,
            client,
            EvalConfig(
                with_cot=cot,
                format=fmt,
                k=config.retrieval_k,
                concurrency=concurrency or config.concurrency,
                token_budget=config.prompt_token_budget,
                max_output_tokens=config.max_output_tokens,
                timeout=config.client_timeout,
            ),
        )
        if out_path:
            Path(out_path).write_text(canonical_json(report.to_json_dict()), "utf-8")
        counts = ", ".join(f"{k}={v}" for k, v in sorted(report.status_counts.items()))
        click.echo(
            f"cases={report.total} acc={report.acc:.4f} "
            f"al={report.al_seconds:.4f}s al_e2e={report.al_e2e_seconds:.4f}s [{counts}]"
        )

    _guard(ctx, body)


@main.command(name="derive-eval")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True),
              help="Generated instances JSONL.")
@click.option("--kb-out", "kb_out", required=True, type=click.Path(),
              help="Directory for the materialized knowledge base.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Labeled dataset JSONL path.")
@click.pass_context
def derive_eval(ctx, data_path, kb_out, out_path):
    """Turn generated instances into a labeled eval set plus its kb."""

    def body():
        instances = load_instances_jsonl(data_path)
        cases, kb = derive_eval_dataset(instances)
        save_kb(kb, kb_out)
        save_dataset(cases, out_path)
        click.echo(
            f"derived {len(cases)} case(s) over {len(kb.docs)} workflow(s) "
            f"-> {out_path}, kb -> {kb_out}"
        )

    _guard(ctx, body)


if __name__ == "__main__":
    main()
