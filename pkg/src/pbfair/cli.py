"""Command-line workflows: corpus validation, group mining, rule evaluation,
fairness verification, synthetic generation, and evolution runs.

Exit codes: 0 success, 1 input error, 2 internal invariant violation.
All randomness is surfaced through --seed flags; given identical inputs and
seeds every command is deterministic.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import report
from .cohesion import OracleGuardError, mine_cohesive_groups
from .core import BallotKind, Objective, make_allocation, utilitarian_welfare
from .data import (
    GroupCache,
    PabulibError,
    Role,
    SynthConfig,
    assign_split,
    content_hash,
    filter_report,
    generate_synthetic,
    parse_pabulib_file,
    serialize_pabulib,
)
from .dsl import load_rule_file
from .evolve import (
    EngineConfig,
    MockChatClient,
    HttpChatClient,
    build_eval_context,
    compute_epsilon,
    run_evolution,
)
from .fairness import (
    InternalInconsistencyError,
    normalized_welfare,
    strong_ejr_approx,
    verify_ejr_bruteforce,
    verify_pjr_bruteforce,
    verify_strong_ejr_bruteforce,
    verify_strong_ejr_maximal,
)
from .rules import max_util, greed_util, mes, complete_add1, complete_with, resolve_rule

OBJECTIVES = {"card": Objective.CARD, "cost": Objective.COST, "cardinal": Objective.CARDINAL}


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _collect_files(paths, data_root) -> list[Path]:
    root = Path(data_root) if data_root else Path(".")
    files: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if not path.is_absolute():
            path = root / path
        if path.is_dir():
            files.extend(sorted(path.glob("*.pb")))
        else:
            files.append(path)
    return files


def _load_corpus(paths, data_root, kind: BallotKind | None = None):
    """Parse, filter and split; returns (kept entries with file paths, problems)."""
    kept, errors, rejected = [], [], []
    for path in _collect_files(paths, data_root):
        try:
            entry = parse_pabulib_file(path)
        except PabulibError as exc:
            errors.append((path, exc))
            continue
        except OSError as exc:
            errors.append((path, exc))
            continue
        reasons = filter_report([entry])[0][1]
        if reasons:
            rejected.append((path, entry, reasons))
            continue
        if kind is not None and entry.profile.kind is not kind:
            rejected.append((path, entry, [f"ballot kind is not {kind.value}"]))
            continue
        kept.append((path, entry))
    return kept, errors, rejected


@click.group()
def main():
    """Participatory-budgeting rules and Strong-EJR fairness toolkit."""


@main.command()
@click.argument("paths", nargs=-1, required=True)
@click.option("--data-root", default=None, help="Base directory for relative paths.")
def validate(paths, data_root):
    """Parse files, apply the dataset filter, and summarize the splits."""
    kept, errors, rejected = _load_corpus(paths, data_root)
    for path, exc in errors:
        click.echo(f"PARSE ERROR {path}: {exc}")
    for path, _entry, reasons in rejected:
        click.echo(f"FILTERED {path}: {'; '.join(reasons)}")
    counts: dict[str, int] = {}
    for _path, entry in kept:
        role = assign_split(entry)
        key = f"{entry.profile.kind.value}/{role.value}"
        counts[key] = counts.get(key, 0) + 1
    click.echo(f"parsed {len(kept) + len(rejected)} file(s), kept {len(kept)} after filtering")
    for key in sorted(counts):
        click.echo(f"  {key}: {counts[key]}")
    if errors:
        sys.exit(1)


@main.command()
@click.argument("paths", nargs=-1, required=True)
@click.option("--data-root", default=None)
@click.option("--cache", "cache_dir", default=".pbfair-cache", show_default=True)
@click.option("--sigma", default=None, type=int, help="Report truncation incidence at this cap.")
def mine(paths, data_root, cache_dir, sigma):
    """Mine cohesive groups for a corpus into the cache, writing a manifest."""
    kept, errors, rejected = _load_corpus(paths, data_root)
    if errors:
        for path, exc in errors:
            click.echo(f"PARSE ERROR {path}: {exc}", err=True)
        sys.exit(1)
    cache = GroupCache(Path(cache_dir))
    manifest, flagged = [], 0
    for path, entry in kept:
        digest = content_hash(entry)
        started = time.perf_counter()
        index, hit = cache.get_or_mine(entry, digest)
        elapsed = (time.perf_counter() - started) * 1000
        if index.size == 0:
            flagged += 1
            click.echo(f"NO GROUPS {path} (excluded from manifest)")
            continue
        truncated = sigma is not None and index.size > sigma
        manifest.append({
            "path": str(path),
            "sha256": digest,
            "split": assign_split(entry).value,
            "ballot_kind": entry.profile.kind.value,
            "n": entry.profile.num_ballots,
            "m": entry.instance.num_projects,
            "budget": entry.instance.budget,
            "groups_file": cache.groups_path(digest).name,
        })
        state = "cache hit" if hit else f"mined in {elapsed:.1f} ms"
        extra = f", truncates at {sigma}" if truncated else ""
        click.echo(f"{path}: {index.size} group(s) ({state}{extra})")
    cache.write_manifest(manifest)
    click.echo(f"manifest: {cache.root / 'manifest.csv'} ({len(manifest)} instance(s), {flagged} flagged)")


def _rule_callable(token: str):
    return resolve_rule(token, dsl_loader=lambda spec: load_rule_file(spec))


@main.command(name="eval")
@click.argument("paths", nargs=-1, required=True)
@click.option("--rules", "rule_tokens", required=True,
              help="Comma-separated rule tokens, e.g. maxutil,greedutil,mes_cost+add1u,dsl:rule.txt")
@click.option("--objective", type=click.Choice(sorted(OBJECTIVES)), required=True)
@click.option("--sigma", default=100, show_default=True, type=int)
@click.option("--data-root", default=None)
@click.option("--cache", "cache_dir", default=".pbfair-cache", show_default=True)
@click.option("--out", "out_dir", default="eval-out", show_default=True)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--figures/--no-figures", default=True, show_default=True)
def cmd_eval(paths, rule_tokens, objective, sigma, data_root, cache_dir, out_dir, jobs, figures):
    """Evaluate rules over a corpus: per-instance CSV plus aggregate table and figure."""
    objective = OBJECTIVES[objective]
    kept, errors, rejected = _load_corpus(paths, data_root, kind=objective.ballot_kind)
    if errors:
        for path, exc in errors:
            click.echo(f"PARSE ERROR {path}: {exc}", err=True)
        sys.exit(1)
    if rejected:
        click.echo(f"note: {len(rejected)} file(s) dropped by the dataset filter", err=True)
    if not kept:
        _fail("no usable instances after filtering")
    try:
        rules = [(token.strip(), _rule_callable(token.strip()))
                 for token in rule_tokens.split(",") if token.strip()]
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    cache = GroupCache(Path(cache_dir))

    def evaluate_instance(item):
        path, entry = item
        index, _ = cache.get_or_mine(entry)
        optimum = utilitarian_welfare(
            entry.instance, entry.profile,
            max_util(entry.instance, entry.profile, objective), objective,
        )
        rows = []
        for name, fn in rules:
            started = time.perf_counter()
            allocation = fn(entry.instance, entry.profile, objective)
            elapsed = (time.perf_counter() - started) * 1000
            welfare = utilitarian_welfare(entry.instance, entry.profile, allocation, objective)
            fairness = strong_ejr_approx(index, allocation, entry.profile, objective,
                                         entry.instance, sigma=sigma)
            rows.append(report.EvalRow(
                instance=path.name,
                rule=name,
                welfare=str(welfare),
                welfare_norm=normalized_welfare(entry.instance, entry.profile, allocation,
                                                objective, optimum),
                phi=fairness.phi,
                strong_ejr=fairness.strong_ejr,
                vacuous=fairness.vacuous,
                groups_considered=fairness.groups_considered,
                runtime_ms=elapsed,
            ))
        return rows

    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                buckets = list(pool.map(evaluate_instance, kept))
        else:
            buckets = [evaluate_instance(item) for item in kept]
    except InternalInconsistencyError as exc:
        _fail(str(exc), code=2)
    except ValueError as exc:
        _fail(str(exc))

    rows = [row for bucket in buckets for row in bucket]
    out = Path(out_dir)
    report.write_eval_csv(rows, out / "eval.csv")
    stats = report.aggregate(rows)
    report.write_aggregate_csv(stats, out / "aggregate.csv")
    (out / "aggregate.md").write_text(report.aggregate_markdown(stats), encoding="utf-8")
    if figures:
        report.render_tradeoff(stats, out / "tradeoff.png")
    click.echo(report.aggregate_markdown(stats))
    click.echo(f"wrote {out / 'eval.csv'} ({len(rows)} rows)")


@main.command()
@click.argument("instance_file")
@click.option("--allocation", required=True, help="Comma-separated project ids.")
@click.option("--objective", type=click.Choice(sorted(OBJECTIVES)), required=True)
@click.option("--brute", is_flag=True, help="Also run the brute-force oracles (small instances).")
@click.option("--sigma", default=None, type=int)
@click.option("--data-root", default=None)
def verify(instance_file, allocation, objective, brute, sigma, data_root):
    """Fairness verdicts for one allocation: efficient Strong-EJR, phi, optional oracles."""
    objective = OBJECTIVES[objective]
    path = _collect_files([instance_file], data_root)[0]
    try:
        entry = parse_pabulib_file(path)
    except (PabulibError, OSError) as exc:
        _fail(str(exc))
    if entry.profile.kind is not objective.ballot_kind:
        _fail(f"objective {objective.value} needs {objective.ballot_kind.value} ballots")
    ids = {p.id: p.index for p in entry.instance.projects}
    tokens = [tok.strip() for tok in allocation.split(",") if tok.strip()]
    unknown = [tok for tok in tokens if tok not in ids]
    if unknown:
        _fail(f"allocation references unknown project id(s): {', '.join(unknown)}")
    try:
        alloc = make_allocation(entry.instance, (ids[tok] for tok in tokens))
    except ValueError as exc:
        _fail(str(exc))
    index = mine_cohesive_groups(entry.instance, entry.profile)
    verdict = verify_strong_ejr_maximal(index, alloc, entry.profile, objective, entry.instance)
    fairness = strong_ejr_approx(index, alloc, entry.profile, objective, entry.instance, sigma=sigma)
    click.echo(f"strong-ejr (efficient): {verdict}")
    click.echo(f"phi: {fairness.phi:.6f} over {fairness.groups_considered} group(s)"
               + (" [vacuous]" if fairness.vacuous else ""))
    if brute:
        try:
            s = verify_strong_ejr_bruteforce(entry.instance, entry.profile, alloc, objective)
            e = verify_ejr_bruteforce(entry.instance, entry.profile, alloc, objective)
            p = verify_pjr_bruteforce(entry.instance, entry.profile, alloc, objective)
        except OracleGuardError as exc:
            click.echo(f"brute-force refused: {exc}")
            return
        click.echo(f"strong-ejr (brute): {s}\nejr (brute): {e}\npjr (brute): {p}")
        if s != verdict:
            _fail("efficient and brute-force Strong-EJR verdicts disagree", code=2)


@main.command()
@click.option("--out", "out_dir", required=True)
@click.option("--count", default=10, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--cumulative", is_flag=True)
@click.option("--voters", nargs=2, type=int, default=(100, 1000), show_default=True)
@click.option("--projects", nargs=2, type=int, default=(10, 25), show_default=True)
@click.option("--nearest", nargs=2, type=int, default=(3, 8), show_default=True)
@click.option("--budget-fraction", nargs=2, type=float, default=(0.2, 0.8), show_default=True)
def synth(out_dir, count, seed, cumulative, voters, projects, nearest, budget_fraction):
    """Generate synthetic Euclidean-model instances as Pabulib files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for i in range(count):
        config = SynthConfig(
            voters=tuple(voters), projects=tuple(projects), nearest=tuple(nearest),
            budget_fraction=tuple(budget_fraction), cumulative=cumulative, seed=seed + i,
        )
        entry = generate_synthetic(config)
        target = out / f"synth_{seed + i:05d}.pb"
        target.write_text(serialize_pabulib(entry), encoding="utf-8")
        written += 1
    click.echo(f"wrote {written} instance(s) to {out}")


def _load_engine_config(path, seed, max_chat_calls) -> EngineConfig:
    values: dict = {}
    if path:
        field_types = {f.name: f.type for f in dataclasses.fields(EngineConfig)}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "schema_version":
                if value != "1":
                    raise ValueError(f"unsupported config schema_version {value!r}")
                continue
            if key not in field_types:
                raise ValueError(f"line {lineno}: unknown engine option {key!r}")
            try:
                values[key] = int(value)
            except ValueError:
                values[key] = float(value)
    if seed is not None:
        values["seed"] = seed
    if max_chat_calls is not None:
        values["max_chat_calls"] = max_chat_calls
    return EngineConfig(**values)


def _default_baselines(objective: Objective) -> dict:
    base = {
        "maxutil": max_util,
        "greedutil": greed_util,
        "mes": mes,
        "mes+add1": complete_add1,
        "mes+add1u": lambda i, p, o: complete_with(complete_add1(i, p, o), greed_util, i, p, o),
        "mes+add1um": lambda i, p, o: complete_with(complete_add1(i, p, o), max_util, i, p, o),
    }
    if objective.ballot_kind is BallotKind.APPROVAL:
        base["seqphrag"] = _rule_callable("seqphrag")
        base["maximinsupp"] = _rule_callable("maximinsupp")
        for sat in ("mes_cost", "mes_card"):
            base[sat] = _rule_callable(sat)
            for completion in ("add1", "add1u", "add1um"):
                base[f"{sat}+{completion}"] = _rule_callable(f"{sat}+{completion}")
        del base["mes"], base["mes+add1"], base["mes+add1u"], base["mes+add1um"]
    return base


@main.command()
@click.argument("paths", nargs=-1, required=True)
@click.option("--objective", type=click.Choice(sorted(OBJECTIVES)), required=True)
@click.option("--mock", "mock_script", default=None,
              help="JSON file with a list of canned chat responses (deterministic run).")
@click.option("--endpoint", default=None, help="Chat-completions base URL.")
@click.option("--model", default="gpt-4o-mini", show_default=True)
@click.option("--token-env", default="OPENAI_API_KEY", show_default=True)
@click.option("--config", "config_path", default=None, help="Engine key=value config file.")
@click.option("--epsilon", default=None, type=float, help="Override the penalty threshold.")
@click.option("--runs", default=1, show_default=True, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--max-chat-calls", default=None, type=int)
@click.option("--sigma", default=100, show_default=True, type=int)
@click.option("--data-root", default=None)
@click.option("--cache", "cache_dir", default=".pbfair-cache", show_default=True)
@click.option("--out", "out_dir", default="evolve-out", show_default=True)
def evolve(paths, objective, mock_script, endpoint, model, token_env, config_path,
           epsilon, runs, seed, max_chat_calls, sigma, data_root, cache_dir, out_dir):
    """Run the evolutionary rule search on a training corpus."""
    objective = OBJECTIVES[objective]
    kept, errors, _ = _load_corpus(paths, data_root, kind=objective.ballot_kind)
    if errors:
        for path, exc in errors:
            click.echo(f"PARSE ERROR {path}: {exc}", err=True)
        sys.exit(1)
    train = [entry for _path, entry in kept if assign_split(entry) is Role.TRAIN]
    if not train:
        train = [entry for _path, entry in kept]
    if not train:
        _fail("no training instances")
    if mock_script is None and endpoint is None:
        _fail("provide --mock SCRIPT or --endpoint URL")
    try:
        config = _load_engine_config(config_path, seed, max_chat_calls)
    except (OSError, ValueError) as exc:
        _fail(str(exc))

    cache = GroupCache(Path(cache_dir))
    ctx = build_eval_context(train, objective, cache=cache)
    if config.epsilon is None:
        value = compute_epsilon(_default_baselines(objective), ctx, sigma=sigma, override=epsilon)
        config = dataclasses.replace(config, epsilon=value)
    click.echo(f"training instances: {ctx.size}, epsilon: {config.epsilon:.6f}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for run_index in range(runs):
        run_config = dataclasses.replace(config, seed=config.seed + run_index)
        if mock_script is not None:
            responses = json.loads(Path(mock_script).read_text(encoding="utf-8"))
            client = MockChatClient(responses=responses)
        else:
            client = HttpChatClient(
                base_url=endpoint, model=model, token_env=token_env,
                transcript_path=str(out / f"transcripts_run{run_index}.ndjson"),
            )
        result = run_evolution(run_config, ctx, client,
                               checkpoint_path=out / f"checkpoint_run{run_index}.json")
        (out / f"events_run{run_index}.ndjson").write_text(result.event_log_text(), encoding="utf-8")
        best = result.best
        if best is None:
            click.echo(f"run {run_index}: no valid rule evolved")
            continue
        (out / f"best_run{run_index}.dsl").write_text(best.source + "\n", encoding="utf-8")
        report.render_fitness_curve(result.events, out / f"fitness_run{run_index}.png",
                                    title=f"run {run_index}")
        summary.append({"run": run_index, "best_fitness": best.fitness,
                        "best_description": best.description, "best_source": best.source,
                        "chat_calls": result.accounting.calls})
        click.echo(f"run {run_index}: best q = {best.fitness:.6f}  [{best.source}]")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True),
                                      encoding="utf-8")
    if summary:
        mean_q = sum(s["best_fitness"] for s in summary) / len(summary)
        click.echo(f"mean best fitness over {len(summary)} run(s): {mean_q:.6f}")


if __name__ == "__main__":
    main()
