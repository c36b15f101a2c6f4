"""Command-line entry point.

Exit status contract: 0 success, 1 run error, 2 usage/config error (click's
own convention for bad flags is also 2).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import engine, evaluation
from .config import ABLATIONS, load_config
from .kg import KnowledgeGraph, SnapshotError
from .providers import ProviderError, build_live_suite


def _build_config(config_path, deep, ablations, flag_overrides=None):
    try:
        config = load_config(config_path, dict(os.environ), flag_overrides)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(str(exc)) from exc
    if deep:
        config.t_max = 20
    for name in ablations:
        config.apply_ablation(name)
    config.validate()
    return config


@click.group()
def main():
    """Uncertainty-guided supply-chain investigation."""


@main.command("run")
@click.option("--query", required=True, help="The investigation query.")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--deep", is_flag=True, help="Deep mode: raises t_max to 20.")
@click.option("--ablation", "ablations", multiple=True,
              type=click.Choice(ABLATIONS))
@click.option("--t-max", type=int, default=None, help="Override t_max.")
@click.option("--k-actions", type=int, default=None, help="Override k_actions.")
def run_cmd(query, config_path, out_dir, deep, ablations, t_max, k_actions):
    """Run a live investigation (needs provider endpoints in the environment)."""
    overrides = {"t_max": t_max, "k_actions": k_actions}
    config = _build_config(config_path, deep, ablations, overrides)
    try:
        suite = build_live_suite(judge_model=config.agent_model_tags["judge"])
        result = engine.run(query, config, suite, out_dir)
    except (engine.RunError, ProviderError) as exc:
        click.echo(f"run error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"converged by {result.converged_by} after "
               f"{result.iterations_run} iterations; outputs in {out_dir}")


@main.command("replay")
@click.option("--fixtures", "fixture_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--deep", is_flag=True)
@click.option("--ablation", "ablations", multiple=True,
              type=click.Choice(ABLATIONS))
def replay_cmd(fixture_dir, config_path, out_dir, deep, ablations):
    """Re-execute a recorded run hermetically from fixtures."""
    config = _build_config(config_path, deep, ablations)
    try:
        result = engine.replay(fixture_dir, config, out_dir)
    except (engine.RunError, ProviderError) as exc:
        click.echo(f"run error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"replayed {result.iterations_run} iterations "
        f"(converged by {result.converged_by}, "
        f"final U_memory={result.u_memory_trace[-1]:.4f}); outputs in {out_dir}"
    )


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--judge", "judge_kind", default="exact",
              type=click.Choice(["exact", "chat"]))
@click.option("--out", "out_path", type=click.Path())
def eval_cmd(pred_path, ref_path, judge_kind, out_path):
    """Score prediction files against references per quadrant."""
    try:
        preds = evaluation.load_json_lines_or_array(pred_path)
        refs = evaluation.load_json_lines_or_array(ref_path)
    except (json.JSONDecodeError, KeyError) as exc:
        raise click.UsageError(f"bad input file: {exc}") from exc
    if judge_kind == "chat":
        try:
            suite = build_live_suite()
        except ProviderError as exc:
            raise click.UsageError(str(exc)) from exc
        judge = evaluation.ChatJudge(suite.chat, "")
    else:
        judge = evaluation.ExactJudge()
    report = evaluation.evaluate_files(preds, refs, judge)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
            fh.write("\n")
    click.echo(evaluation.format_report_table(report))


def _load_snapshot(path: str) -> KnowledgeGraph:
    try:
        return KnowledgeGraph.load(Path(path).read_bytes())
    except SnapshotError as exc:
        raise click.UsageError(f"bad snapshot {path}: {exc}") from exc


@main.command("inspect")
@click.option("--snapshot", "snapshot_path", required=True,
              type=click.Path(exists=True))
@click.option("--top", default=10, show_default=True,
              help="How many highest-uncertainty facts to list.")
def inspect_cmd(snapshot_path, top):
    """Summarize a graph snapshot."""
    graph = _load_snapshot(snapshot_path)
    facts = sorted(
        ((graph.fact_text(f), f.uncertainty) for f in graph.all_facts()),
        key=lambda item: (-item[1], item[0]),
    )
    click.echo(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges, "
               f"{len(graph.active_leaves())} active leaves")
    for text, u in facts[:top]:
        click.echo(f"  U={u:.4f}  {text}")


def export_dot(graph: KnowledgeGraph, tau_high: float = 0.7) -> str:
    """Stable Graphviz rendering: sorted nodes/edges, dashed styling for
    entities above the high-uncertainty threshold."""
    from .kg import _id_key

    lines = ["digraph g {"]
    for nid in sorted(graph.nodes, key=_id_key):
        node = graph.nodes[nid]
        style = ', style="dashed", color="grey"' if node.uncertainty > tau_high else ""
        label = node.label.replace('"', '\\"')
        lines.append(f'  {nid} [label="{label} ({node.uncertainty:.2f})"{style}];')
    for eid in sorted(graph.edges, key=_id_key):
        edge = graph.edges[eid]
        rel = edge.relation.replace('"', '\\"')
        lines.append(f'  {edge.head} -> {edge.tail} [label="{rel}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


@main.command("export-dot")
@click.option("--snapshot", "snapshot_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
@click.option("--tau-high", default=0.7, show_default=True,
              help="Dashed-node uncertainty threshold.")
def export_dot_cmd(snapshot_path, out_path, tau_high):
    """Export a snapshot as Graphviz dot."""
    graph = _load_snapshot(snapshot_path)
    dot = export_dot(graph, tau_high)
    if out_path:
        Path(out_path).write_text(dot, encoding="utf-8")
    else:
        click.echo(dot, nl=False)


if __name__ == "__main__":
    main()
