"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad usage or bad input), 2 internal
error.  Batch subcommands are plain single-process jobs; `generate` and
`translate` checkpoint their progress and resume when re-run.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evalkit, quality, synthgen, translate as translate_mod
from .corpus import DiseaseCatalog, default_catalog
from .errors import JobPaused, MedaidError
from .gateway import load_config, serve as serve_app
from .langs import LanguageCode
from .llmgate import (
    BackendConfig,
    ENV_LLM_BASE_URL,
    ENV_TRANSLATE_API_KEY,
    ENV_TRANSLATE_BASE_URL,
    HttpBackend,
    identity_backend,
)

DEFAULT_SHAREGPT_SYSTEM = (
    "You are a medical assistant conducting a diagnostic consultation. Ask focused "
    "questions about the patient's symptoms and finish with a diagnosis."
)


def _load_catalog(path: str | None) -> DiseaseCatalog:
    return DiseaseCatalog.from_file(path) if path else default_catalog()


def load_corpus_any(path: str) -> list[corpus_mod.Dialogue]:
    """Accept either the source corpus JSON object or internal JSONL."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        whole = json.loads(text)
    except json.JSONDecodeError:
        return corpus_mod.read_jsonl(path)
    if isinstance(whole, dict) and "exchanges" in whole:
        return [corpus_mod.dialogue_from_dict(whole)]
    return corpus_mod.parse_mddial(text)


@click.group()
def cli():
    """Multilingual medical consultation toolkit."""


@cli.command()
@click.option("--in", "in_path", required=True, help="Corpus file (source JSON or JSONL).")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of a table.")
def stats(in_path: str, as_json: bool):
    """Corpus statistics: turns and word counts."""
    dialogues = load_corpus_any(in_path)
    result = corpus_mod.compute_stats(dialogues)
    if as_json:
        click.echo(json.dumps(result.to_dict(), indent=2))
        return
    headers = ["Avg Turns", "Total", "Min", "Max", "Words/Dial", "Patient", "Doctor"]
    values = [
        f"{result.avg_turns:.1f}",
        str(result.total_dialogues),
        str(result.min_turns),
        str(result.max_turns),
        f"{result.avg_words_per_dialogue:.1f}",
        f"{result.avg_words_patient_utterance:.1f}",
        f"{result.avg_words_doctor_utterance:.1f}",
    ]
    click.echo(_aligned_table([headers, values]))


@cli.command(name="format")
@click.option("--in", "in_path", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--system-message", default=DEFAULT_SHAREGPT_SYSTEM, show_default=False)
@click.option("--with-gold/--no-with-gold", default=True, help="Attach id/gold fields.")
def format_cmd(in_path: str, out_path: str, system_message: str, with_gold: bool):
    """Convert a corpus to ShareGPT JSONL (one conversation per line)."""
    dialogues = load_corpus_any(in_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            conv = corpus_mod.to_sharegpt(d, system_message)
            record = conv.to_dict()
            if with_gold:
                record["id"] = d.id
                record["gold"] = d.diagnosis
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    click.echo(f"wrote {len(dialogues)} conversations to {out_path}")


@cli.command()
@click.option("--count", required=True, type=int)
@click.option("--catalog", "catalog_path", default=None)
@click.option("--out", "out_path", required=True)
@click.option("--checkpoint", "checkpoint_path", default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--min-exchanges", type=int, default=4, show_default=True)
@click.option("--max-exchanges", type=int, default=8, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--model", default="llama-3.3-70b-versatile", show_default=True)
@click.option("--mock", is_flag=True, help="Use the offline generation backend.")
def generate(
    count, catalog_path, out_path, checkpoint_path, seed,
    min_exchanges, max_exchanges, workers, model, mock,
):
    """Generate synthetic consultations until COUNT are accepted."""
    catalog = _load_catalog(catalog_path)
    if mock:
        backend = synthgen.offline_generation_backend(catalog, seed)
    else:
        base_url = os.environ.get(ENV_LLM_BASE_URL)
        if not base_url:
            raise click.UsageError(f"set ${ENV_LLM_BASE_URL} or pass --mock")
        backend = HttpBackend(BackendConfig(base_url=base_url))
    job = synthgen.GenerationJob(
        target_count=count,
        output_path=out_path,
        checkpoint_path=checkpoint_path or f"{out_path}.checkpoint.json",
        min_exchanges=min_exchanges,
        max_exchanges=max_exchanges,
        seed=seed,
    )

    def report(p: synthgen.ProgressReport):
        click.echo(
            f"\r{p.done}/{p.total} dialogues  {p.rate:.1f}/min  eta {p.eta:.0f}s",
            nl=False,
            err=True,
        )

    try:
        result = synthgen.run_job(
            job, backend, catalog, workers=workers, model=model, progress=report
        )
    except JobPaused as exc:
        click.echo(f"\npaused: {exc} (re-run to resume)", err=True)
        raise
    click.echo("", err=True)
    click.echo(
        f"accepted {len(result.dialogues)}, rejections {len(result.rejections)}, "
        f"skipped slots {len(result.skipped_slots)}"
    )


@cli.command(name="filter")
@click.option("--in", "in_path", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--catalog", "catalog_path", default=None)
@click.option("--dedup-threshold", type=float, default=quality.DEFAULT_DUP_THRESHOLD, show_default=True)
@click.option("--shingle-k", type=int, default=quality.DEFAULT_SHINGLE_K, show_default=True)
@click.option("--hashes", type=int, default=quality.DEFAULT_NUM_HASHES, show_default=True)
@click.option("--min-symptom-matches", type=int, default=quality.DEFAULT_REQUIRED_MATCHES, show_default=True)
@click.option("--report", "report_path", default=None)
def filter_cmd(
    in_path, out_path, catalog_path, dedup_threshold, shingle_k, hashes,
    min_symptom_matches, report_path,
):
    """Apply the coherence gate, then near-duplicate removal."""
    catalog = _load_catalog(catalog_path)
    dialogues = load_corpus_any(in_path)
    coherence_reports = []
    coherent: list[corpus_mod.Dialogue] = []
    unlabeled = 0
    for d in dialogues:
        if d.diagnosis is None or d.diagnosis not in catalog:
            unlabeled += 1
            continue
        report = quality.coherence_check(d, catalog, min_symptom_matches)
        coherence_reports.append(report)
        if report.passed:
            coherent.append(d)
    dedup_report = quality.dedup(coherent, dedup_threshold, shingle_k, hashes)
    kept_ids = set(dedup_report.kept)
    survivors = [d for d in coherent if d.id in kept_ids]
    corpus_mod.write_jsonl(survivors, out_path)
    if report_path:
        payload = {
            "input": len(dialogues),
            "unlabeled_dropped": unlabeled,
            "coherence": [r.to_dict() for r in coherence_reports],
            "dedup": dedup_report.to_dict(),
            "kept": len(survivors),
        }
        Path(report_path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    click.echo(
        f"kept {len(survivors)} of {len(dialogues)} "
        f"(unlabeled {unlabeled}, incoherent {len(coherence_reports) - len(coherent)}, "
        f"duplicates {len(dedup_report.removed)})"
    )


@cli.command(name="translate")
@click.option("--in", "in_path", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--langs", default="hi,te,ta,bn,mr,ar", show_default=True)
@click.option("--checkpoint", "checkpoint_path", default=None)
@click.option("--model", default="translategemma", show_default=True)
@click.option("--identity-mock", is_flag=True, help="Echo translator (offline testing).")
def translate_cmd(in_path, out_path, langs, checkpoint_path, model, identity_mock):
    """Expand an English corpus into aligned parallel translations."""
    dialogues = load_corpus_any(in_path)
    targets = [LanguageCode(code.strip()) for code in langs.split(",") if code.strip()]
    if identity_mock:
        backend = identity_backend()
    else:
        base_url = os.environ.get(ENV_TRANSLATE_BASE_URL)
        if not base_url:
            raise click.UsageError(f"set ${ENV_TRANSLATE_BASE_URL} or pass --identity-mock")
        backend = HttpBackend(
            BackendConfig(base_url=base_url, api_key_env=ENV_TRANSLATE_API_KEY)
        )
    entries = translate_mod.expand_corpus(
        dialogues,
        targets,
        backend,
        model=model,
        output_path=out_path,
        checkpoint_path=checkpoint_path or f"{out_path}.checkpoint.json",
    )
    click.echo(f"expanded {len(entries)} dialogues into {1 + len(targets)} languages")


def _aligned_table(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows)


@cli.group()
def eval():
    """Evaluation metrics over prediction logs and annotation files."""


@eval.command(name="accuracy")
@click.option("--in", "in_path", required=True)
@click.option("--json", "as_json", is_flag=True)
def eval_accuracy(in_path, as_json):
    records = evalkit.read_prediction_log(in_path)
    value = evalkit.accuracy(records)
    if as_json:
        click.echo(json.dumps({"accuracy": value, "records": len(records)}))
    else:
        click.echo(_aligned_table([["Records", "Accuracy"],
                                   [str(len(records)), f"{evalkit.round_half_up(value)}%"]]))


@eval.command(name="per-disease")
@click.option("--in", "in_path", required=True)
@click.option("--json", "as_json", is_flag=True)
def eval_per_disease(in_path, as_json):
    records = evalkit.read_prediction_log(in_path)
    table = evalkit.per_disease(records)
    if as_json:
        click.echo(json.dumps(table.to_dict(), indent=2))
        return
    rows = [["Disease", "Correct", "Total", "Accuracy"]]
    for disease, row in sorted(table.rows.items()):
        rows.append(
            [disease, str(row.correct), str(row.total), f"{evalkit.round_half_up(row.accuracy)}%"]
        )
    click.echo(_aligned_table(rows))


@eval.command(name="confusion")
@click.option("--in", "in_path", required=True)
@click.option("--top-k", type=int, default=10, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def eval_confusion(in_path, top_k, as_json):
    records = evalkit.read_prediction_log(in_path)
    ranked = evalkit.top_misclassifications(records, top_k)
    if as_json:
        click.echo(json.dumps(
            [{"gold": g, "predicted": p, "frequency": c} for g, p, c in ranked], indent=2
        ))
        return
    rows = [["Gold", "Misclassified As", "Frequency"]]
    rows += [[g, p, str(c)] for g, p, c in ranked]
    click.echo(_aligned_table(rows))


@eval.command(name="alpha")
@click.option("--in", "in_path", required=True)
@click.option("--metric", type=click.Choice(["interval", "nominal"]), default="interval",
              show_default=True)
@click.option("--json", "as_json", is_flag=True)
def eval_alpha(in_path, metric, as_json):
    matrix = evalkit.read_annotation_file(in_path)
    value = evalkit.krippendorff_alpha(matrix, metric)
    if as_json:
        click.echo(json.dumps({"alpha": value, "metric": metric}))
    else:
        click.echo(_aligned_table([["Metric", "Alpha"], [metric, f"{value:.3f}"]]))


@eval.command(name="safety")
@click.option("--in", "in_path", required=True)
@click.option("--json", "as_json", is_flag=True)
def eval_safety(in_path, as_json):
    matrix = evalkit.read_annotation_file(in_path)
    value = evalkit.safety_pass_rate(matrix)
    if as_json:
        click.echo(json.dumps({"safety_pass_rate": value}))
    else:
        click.echo(_aligned_table([["Safety Pass Rate"], [f"{evalkit.round_half_up(value)}%"]]))


@eval.command(name="reward")
@click.option("--in", "in_path", required=True)
@click.option("--catalog", "catalog_path", default=None)
@click.option("--json", "as_json", is_flag=True)
def eval_reward(in_path, catalog_path, as_json):
    """Mean reward breakdown over a ShareGPT file carrying gold labels."""
    catalog = _load_catalog(catalog_path)
    breakdowns = _score_file(in_path, catalog)
    n = len(breakdowns)
    mean = {
        "diagnostic": sum(b.diagnostic for b in breakdowns) / n,
        "conversation_quality": sum(b.conversation_quality for b in breakdowns) / n,
        "format_compliance": sum(b.format_compliance for b in breakdowns) / n,
        "total": sum(b.total for b in breakdowns) / n,
        "transcripts": n,
    }
    if as_json:
        click.echo(json.dumps(mean, indent=2))
        return
    rows = [["Component", "Mean"]]
    for key in ("diagnostic", "conversation_quality", "format_compliance", "total"):
        rows.append([key, f"{mean[key]:.3f}"])
    click.echo(_aligned_table(rows))


def _score_file(in_path: str, catalog: DiseaseCatalog, weights=evalkit.DEFAULT_REWARD_WEIGHTS):
    breakdowns = []
    with open(in_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            raw = json.loads(line)
            gold = raw.get("gold")
            if not gold:
                raise MedaidError(f"line {lineno}: transcript carries no gold label")
            conv = corpus_mod.ShareGPTConversation.from_dict(raw)
            breakdowns.append(evalkit.grpo_reward(conv, gold, catalog, weights))
    if not breakdowns:
        raise MedaidError("no transcripts found")
    return breakdowns


@cli.command(name="score-rewards")
@click.option("--in", "in_path", required=True)
@click.option("--out", "out_path", default=None, help="Per-transcript JSONL output.")
@click.option("--catalog", "catalog_path", default=None)
@click.option("--weights", default="1.0,0.5,0.25", show_default=True)
def score_rewards(in_path, out_path, catalog_path, weights):
    """Score every transcript in a ShareGPT file with the composite reward."""
    catalog = _load_catalog(catalog_path)
    try:
        w = tuple(float(x) for x in weights.split(","))
        assert len(w) == 3
    except (ValueError, AssertionError):
        raise click.UsageError("--weights must be three comma-separated numbers")
    breakdowns = _score_file(in_path, catalog, w)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            for b in breakdowns:
                fh.write(json.dumps(b.to_dict()) + "\n")
    mean_total = sum(b.total for b in breakdowns) / len(breakdowns)
    click.echo(f"scored {len(breakdowns)} transcripts, mean total reward {mean_total:.3f}")


@cli.command()
@click.option("--config", "config_path", default=None)
@click.option("--mock", is_flag=True, help="Offline demo backends.")
@click.option("--listen", default=None, help="Override host:port.")
def serve(config_path, mock, listen):
    """Run the HTTP consultation service."""
    config = load_config(config_path)
    if mock:
        config.mock_backends = True
    if listen:
        config.listen_address = listen
    serve_app(config)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        cli.main(args=argv, prog_name="medaid", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except JobPaused as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except MedaidError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
