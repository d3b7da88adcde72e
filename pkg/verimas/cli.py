"""Command-line entry point."""
import argparse
import asyncio
from dataclasses import replace
import json
import logging
from pathlib import Path
import sys
import time
from typing import Any, Callable, Iterable, Optional, Sequence

from . import __version__
from .attribution import AttributionResult, attribute_with_strategy, golds_from, result_from_record
from .config import RunConfig
from .const import (
    ATTRIBUTION_STRATEGIES,
    ATTRIBUTIONS_FILE,
    COMMAND_ATTRIBUTE,
    COMMAND_BUILD_SFT,
    COMMAND_CONVERT,
    COMMAND_EVALUATE,
    COMMAND_SPLIT,
    COMMAND_TAXONOMY,
    COMMAND_VALIDATE,
    CONVERTED_FILE,
    CORPUS_FILE,
    DEFAULT_ENDPOINT,
    ERRORS_FILE,
    EXIT_ENDPOINT_ERROR,
    EXIT_INPUT_ERROR,
    EXIT_OK,
    EXIT_PARTIAL,
    GROUP_BY,
    GROUP_BY_SOURCE,
    LABELS,
    LABEL_NAMES,
    MANIFEST_FILE,
    REFERENCE_SPLIT,
    REPORT_CSV_FILE,
    REPORT_FILE,
    SOURCE_AEGIS,
    SOURCES,
    SPLIT_TEST_FILE,
    SPLIT_TRAIN_FILE,
    SPLIT_VALIDATION_FILE,
    STATS_FILE,
    STRATEGY_VERIFY,
    TRAIN_CONFIG_FILE,
)
from .dataconstruct import build_corpus, write_corpus, write_stats, write_train_config
from .exceptions import (
    AuthenticationError,
    ConfigError,
    DatasetError,
    TrajectoryError,
    UnmappableLabelError,
    VerifierError,
    VerimasError,
)
from .metrics import MetricsReport, evaluate
from .prompts import load_template_overrides
from .taxonomy import Taxonomy, load_taxonomy
from .trajectory import (
    RecordFailure,
    Trajectory,
    adapt_aegis_record,
    adapt_whowhen_record,
    dataset_stats,
    load_dataset,
    parse_trajectory,
    split_dataset,
    to_record,
    write_dataset,
)
from .verifier import VerifierClient

_LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _add_common(parser: argparse.ArgumentParser, out: bool = True) -> None:
    parser.add_argument("--taxonomy", help="Taxonomy YAML/JSON document (default: shipped aegis14)")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: WARNING)",
    )
    if out:
        parser.add_argument("--out", required=True, help="Output directory")


def _add_strictness(parser: argparse.ArgumentParser, default: bool = True) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--strict", dest="strict", action="store_true", help="Abort on the first bad record")
    group.add_argument("--collect", dest="strict", action="store_false", help="Record bad records and continue")
    parser.set_defaults(strict=default)


def _add_endpoint(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--endpoint", default=DEFAULT_ENDPOINT, help="Chat endpoint URL or mock:<mode>")
    parser.add_argument("--model", help="Model name sent to the endpoint")
    parser.add_argument("--concurrency", type=int, help="Maximum in-flight requests")
    parser.add_argument("--retries", type=int, help="Retries per request")


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(prog="verimas", description="Failure attribution for multi-agent trajectories")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    attribute = commands.add_parser(COMMAND_ATTRIBUTE, help="Attribute failures in a trajectory file")
    attribute.add_argument("--dataset", required=True, help="Trajectory file, one record per line")
    attribute.add_argument("--strategy", default=STRATEGY_VERIFY, choices=ATTRIBUTION_STRATEGIES)
    attribute.add_argument("--seed", type=int, help="Seed recorded in the manifest")
    attribute.add_argument("--budget", type=int, help="Rendered trajectory budget in characters")
    attribute.add_argument("--templates", help="YAML file overriding baseline prompt templates")
    _add_endpoint(attribute)
    _add_strictness(attribute)
    _add_common(attribute)

    build = commands.add_parser(COMMAND_BUILD_SFT, help="Build the verification training corpus")
    build.add_argument("--dataset", required=True, help="Annotated trajectory file")
    build.add_argument("--seed", type=int, help="Sampling seed")
    build.add_argument("--budget", type=int, help="Rendered trajectory budget in characters")
    build.add_argument("--contradict", type=int, help="Contradict instances per trajectory")
    build.add_argument("--neutral", type=int, help="Neutral instances per trajectory")
    build.add_argument("--rare-threshold", type=int, help="Entail count below which an agent is rare")
    build.add_argument("--oversample-factor", type=int, help="Copies per rare-agent instance, original included")
    _add_strictness(build)
    _add_common(build)

    evaluate_cmd = commands.add_parser(COMMAND_EVALUATE, help="Score attribution records against gold")
    evaluate_cmd.add_argument("--records", required=True, help="Attribution records file")
    evaluate_cmd.add_argument("--dataset", required=True, help="Gold-bearing trajectory file")
    _add_common(evaluate_cmd)

    taxonomy = commands.add_parser(COMMAND_TAXONOMY, help="Print the taxonomy")
    _add_common(taxonomy, out=False)

    validate = commands.add_parser(COMMAND_VALIDATE, help="Validate a trajectory file")
    validate.add_argument("--dataset", required=True, help="Trajectory file")
    _add_common(validate, out=False)

    convert = commands.add_parser(COMMAND_CONVERT, help="Convert a source dataset to trajectory records")
    convert.add_argument("--dataset", required=True, help="Source file (.json array or one record per line)")
    convert.add_argument("--source", default=SOURCE_AEGIS, choices=SOURCES)
    _add_endpoint(convert)
    _add_strictness(convert)
    _add_common(convert)

    split = commands.add_parser(COMMAND_SPLIT, help="Split a dataset into train, validation and test files")
    split.add_argument("--dataset", required=True, help="Trajectory file")
    split.add_argument("--seed", type=int, help="Split seed")
    split.add_argument("--test-per-group", type=int, help="Test trajectories sampled per group")
    split.add_argument("--val-ratio", type=float, help="Share of the remainder used for validation")
    split.add_argument(
        "--group-by", choices=GROUP_BY, help=f"Grouping for the test sample (default: {GROUP_BY_SOURCE})"
    )
    _add_strictness(split)
    _add_common(split)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Resolve parsed arguments into a RunConfig."""
    def arg(name: str) -> Any:
        return getattr(args, name, None)

    verifier = {
        "endpoint_url": arg("endpoint"),
        "model_name": arg("model"),
        "concurrency_limit": arg("concurrency"),
        "retries": arg("retries"),
    }
    build = {
        "contradict_per_trajectory": arg("contradict"),
        "neutral_per_trajectory": arg("neutral"),
        "rare_agent_threshold": arg("rare_threshold"),
        "oversample_factor": arg("oversample_factor"),
        "seed": arg("seed"),
        "render_budget": arg("budget"),
        "strict": arg("strict"),
    }
    split = {
        "test_per_group": arg("test_per_group"),
        "val_ratio": arg("val_ratio"),
        "group_by": arg("group_by"),
    }
    data = {
        "command": args.command,
        "dataset": arg("dataset"),
        "taxonomy": arg("taxonomy"),
        "strategy": arg("strategy"),
        "records": arg("records"),
        "source": arg("source"),
        "out": arg("out"),
        "seed": arg("seed"),
        "strict": arg("strict"),
        "budget": arg("budget"),
        "log_level": arg("log_level"),
        "templates": arg("templates"),
        "verifier": {key: value for key, value in verifier.items() if value is not None},
        "build": {key: value for key, value in build.items() if value is not None},
        "split": {key: value for key, value in split.items() if value is not None},
    }
    return RunConfig.from_dict({key: value for key, value in data.items() if value is not None})


def _require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"missing {what} path")
    resolved = Path(path)
    if not resolved.is_file():
        raise DatasetError(f"{what} file not found", path=str(resolved))
    return resolved


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("missing --out directory")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_lines(path: Path, records: Iterable[dict[str, Any]]) -> int:
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    return count


def _write_manifest(out: Path, cfg: RunConfig, taxonomy: Taxonomy, **extra: Any) -> None:
    manifest = {"taxonomy_version": taxonomy.version, **extra, "config": cfg.as_manifest()}
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


def _load_taxonomy(cfg: RunConfig) -> Taxonomy:
    if cfg.taxonomy:
        _require_file(cfg.taxonomy, "taxonomy")
    return load_taxonomy(cfg.taxonomy)


def _batches(items: Iterable[Trajectory], size: int) -> Iterable[list[Trajectory]]:
    batch: list[Trajectory] = []
    for item in items:
        batch.append(item)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


async def _attribute_stream(
    cfg: RunConfig,
    taxonomy: Taxonomy,
    trajectories: Iterable[Trajectory],
    on_result: Callable[[AttributionResult], bool],
) -> int:
    """Attribute trajectories batch by batch; returns the number of requests sent."""
    async with VerifierClient(cfg.verifier) as client:
        register = getattr(client.transport, "register", None)
        for batch in _batches(trajectories, cfg.verifier.concurrency_limit):
            if register is not None:
                for trajectory in batch:
                    register(trajectory)
            results = await asyncio.gather(
                *(
                    attribute_with_strategy(cfg.strategy, trajectory, taxonomy, client, cfg.budget)
                    for trajectory in batch
                )
            )
            for result in results:
                if not on_result(result):
                    return client.requests
        return client.requests


def cmd_attribute(cfg: RunConfig) -> int:
    """Attribute every trajectory and write one record per line."""
    started = time.monotonic()
    taxonomy = _load_taxonomy(cfg)
    stream = load_dataset(cfg.dataset or "", taxonomy, strict=cfg.strict)
    out = _out_dir(cfg)

    if cfg.templates:
        load_template_overrides(_require_file(cfg.templates, "template"))

    failed: list[dict[str, Any]] = []
    written = 0
    with (out / ATTRIBUTIONS_FILE).open("w", encoding="utf-8", newline="\n") as handle:

        def on_result(result: AttributionResult) -> bool:
            nonlocal written
            if not result.ok:
                _LOGGER.error(f"Trajectory {result.trajectory_id}: {len(result.failures)} request(s) failed")
                failed.append(result.failure_record())
                return not cfg.strict
            handle.write(json.dumps(result.to_record(), ensure_ascii=False) + "\n")
            written += 1
            return True

        requests = asyncio.run(_attribute_stream(cfg, taxonomy, stream, on_result))

    errors = [failure.to_record() for failure in stream.errors] + failed
    if errors:
        _write_lines(out / ERRORS_FILE, errors)
    _write_manifest(
        out,
        cfg,
        taxonomy,
        command=cfg.command,
        model=cfg.verifier.model_name,
        endpoint=cfg.verifier.endpoint_url,
        strategy=cfg.strategy,
        seed=cfg.seed,
        budget=cfg.budget,
        concurrency=cfg.verifier.concurrency_limit,
        counts={
            "records": written,
            "failed_trajectories": len(failed),
            "malformed_records": len(stream.errors),
            "requests": requests,
        },
        wall_time_seconds=round(time.monotonic() - started, 3),
    )
    print(f"{written} record(s) written to {out / ATTRIBUTIONS_FILE}, {len(errors)} error(s)")

    # nothing attributed at all counts as an endpoint failure
    if failed and (cfg.strict or not written):
        return EXIT_ENDPOINT_ERROR
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_build_sft(cfg: RunConfig) -> int:
    """Build the corpus, its stats and the training-config sidecar."""
    taxonomy = _load_taxonomy(cfg)
    build = replace(cfg.build, seed=cfg.seed, render_budget=cfg.budget, strict=cfg.strict)
    stream = load_dataset(cfg.dataset or "", taxonomy, strict=cfg.strict)
    out = _out_dir(cfg)

    instances, stats = build_corpus(stream, taxonomy, build)
    write_corpus(instances, out / CORPUS_FILE)
    write_stats(stats, out / STATS_FILE)
    write_train_config(out / TRAIN_CONFIG_FILE)
    errors = [failure.to_record() for failure in stream.errors]
    errors.extend({"id": trajectory_id, "error": "no gold annotations"} for trajectory_id in stats.skipped)
    if errors:
        _write_lines(out / ERRORS_FILE, errors)
    _write_manifest(out, cfg, taxonomy, command=cfg.command, seed=build.seed, counts=stats.per_label)
    _LOGGER.info(f"Corpus written to {out / CORPUS_FILE}")

    ratios = stats.ratios
    print(f"{stats.total} instance(s) from {stats.trajectories} trajectories")
    print(f"{'label':<12}{'count':>8}{'ratio':>10}{'reference':>12}")
    for label in LABELS:
        name = f"{label} {LABEL_NAMES[label]}"
        print(f"{name:<12}{stats.per_label[label]:>8}{ratios[label]:>10.4f}{REFERENCE_SPLIT[label]:>12.4f}")
    return EXIT_PARTIAL if errors else EXIT_OK


def _read_results(path: Path) -> list[AttributionResult]:
    results = []
    with path.open("r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                results.append(result_from_record(json.loads(line)))
            except (json.JSONDecodeError, ConfigError) as err:
                raise DatasetError(str(err), path=str(path), line=number) from err
    return results


def print_headline(report: MetricsReport) -> None:
    """Print micro and macro F1 per level."""
    headline = report.headline()
    print(f"{'level':<8}{'micro F1':>10}{'macro F1':>10}")
    for level in ("pair", "agent", "error"):
        print(f"{level:<8}{headline[f'{level}_micro_f1']:>10.4f}{headline[f'{level}_macro_f1']:>10.4f}")
    print(f"{'average':<8}{report.average_f1:>10.4f}")


def cmd_evaluate(cfg: RunConfig) -> int:
    """Score a records file against its dataset."""
    taxonomy = _load_taxonomy(cfg)
    records = _require_file(cfg.records, "records")
    golds = golds_from(load_dataset(cfg.dataset or "", taxonomy, strict=True))
    out = _out_dir(cfg)

    report = evaluate(_read_results(records), golds, taxonomy)
    report.write_json(out / REPORT_FILE)
    report.write_csv(out / REPORT_CSV_FILE)
    _write_manifest(out, cfg, taxonomy, command=cfg.command, trajectories=report.trajectories)
    print_headline(report)
    return EXIT_OK


def cmd_taxonomy(cfg: RunConfig) -> int:
    """Print one row per error type."""
    taxonomy = _load_taxonomy(cfg)
    print(f"# {taxonomy.version}: {len(taxonomy)} error types")
    for error in taxonomy:
        print(
            f"{error.id}\t{error.family}\t{error.category}\t{error.hypothesis_text}\t"
            f"nearby={','.join(error.nearby)}\tcounter_evidence={len(error.counter_evidence)}"
        )
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    """Validate every record and print a summary."""
    taxonomy = _load_taxonomy(cfg)
    stream = load_dataset(cfg.dataset or "", taxonomy, strict=False)
    trajectories = list(stream)
    bad = len(stream.errors)
    print(f"{stream.ok} ok, {bad} error{'' if bad == 1 else 's'}")
    for failure in stream.errors:
        print(f"line {failure.line}: {failure.message}")
    print(json.dumps(dataset_stats(trajectories), indent=2))
    return EXIT_INPUT_ERROR if bad else EXIT_OK


def _read_source(path: Path) -> list[Any]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            document = json.loads(text)
        except json.JSONDecodeError as err:
            raise DatasetError(f"invalid JSON: {err}", path=str(path)) from err
        return document if isinstance(document, list) else [document]
    records = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise DatasetError(f"invalid JSON: {err}", path=str(path), line=number) from err
    return records


async def _convert(
    cfg: RunConfig, taxonomy: Taxonomy, raw_records: list[Any]
) -> tuple[list[Trajectory], list[RecordFailure]]:
    converted: list[Trajectory] = []
    failures: list[RecordFailure] = []
    client: Optional[VerifierClient] = None
    if cfg.source != SOURCE_AEGIS:
        client = VerifierClient(cfg.verifier)
    try:
        for index, raw in enumerate(raw_records, start=1):
            fallback = f"{cfg.source}-{index}"
            try:
                if not isinstance(raw, dict):
                    raise TrajectoryError("source record is not an object", line=index)
                if client is None:
                    record = adapt_aegis_record(raw, fallback)
                else:
                    record = await adapt_whowhen_record(raw, taxonomy, client, fallback)
                converted.append(parse_trajectory(record, taxonomy, line=index))
            except AuthenticationError:
                raise
            except (TrajectoryError, UnmappableLabelError, VerifierError) as err:
                if cfg.strict:
                    raise
                _LOGGER.warning(f"Skipping source record {index}: {err}")
                failures.append(RecordFailure(index, str(err), getattr(err, "record_id", None)))
    finally:
        if client is not None:
            await client.close()
    return converted, failures


def cmd_convert(cfg: RunConfig) -> int:
    """Convert a source dataset into trajectory records."""
    taxonomy = _load_taxonomy(cfg)
    source = _require_file(cfg.dataset, "source")
    out = _out_dir(cfg)
    converted, failures = asyncio.run(_convert(cfg, taxonomy, _read_source(source)))

    _write_lines(out / CONVERTED_FILE, (to_record(t) for t in converted))
    if failures:
        _write_lines(out / ERRORS_FILE, (failure.to_record() for failure in failures))
    _write_manifest(
        out, cfg, taxonomy, command=cfg.command, source=cfg.source,
        counts={"converted": len(converted), "failed": len(failures)},
    )
    print(f"{len(converted)} record(s) converted, {len(failures)} error(s)")
    return EXIT_PARTIAL if failures else EXIT_OK


def _source_group(t: Trajectory) -> str:
    return t.source or ""


def cmd_split(cfg: RunConfig) -> int:
    """Write fixed-seed train, validation and test files."""
    taxonomy = _load_taxonomy(cfg)
    stream = load_dataset(cfg.dataset or "", taxonomy, strict=cfg.strict)
    out = _out_dir(cfg)

    group_key: Optional[Callable[[Trajectory], str]] = None
    if cfg.split.group_by == GROUP_BY_SOURCE:
        group_key = _source_group
    split = split_dataset(
        stream,
        seed=cfg.seed,
        test_per_group=cfg.split.test_per_group,
        val_ratio=cfg.split.val_ratio,
        group_key=group_key,
    )
    write_dataset(split.train, out / SPLIT_TRAIN_FILE)
    write_dataset(split.validation, out / SPLIT_VALIDATION_FILE)
    write_dataset(split.test, out / SPLIT_TEST_FILE)

    errors = [failure.to_record() for failure in stream.errors]
    if errors:
        _write_lines(out / ERRORS_FILE, errors)
    counts = split.counts()
    _write_manifest(out, cfg, taxonomy, command=cfg.command, seed=cfg.seed, counts=counts, groups=split.groups)
    print(f"{counts['train']} train, {counts['validation']} validation, {counts['test']} test")
    return EXIT_PARTIAL if errors else EXIT_OK


COMMAND_HANDLERS: dict[str, Callable[[RunConfig], int]] = {
    COMMAND_ATTRIBUTE: cmd_attribute,
    COMMAND_BUILD_SFT: cmd_build_sft,
    COMMAND_EVALUATE: cmd_evaluate,
    COMMAND_TAXONOMY: cmd_taxonomy,
    COMMAND_VALIDATE: cmd_validate,
    COMMAND_CONVERT: cmd_convert,
    COMMAND_SPLIT: cmd_split,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        cfg = config_from_args(args)
        return COMMAND_HANDLERS[cfg.command](cfg)
    except VerifierError as err:
        print(f"error: verifier endpoint failure: {err}", file=sys.stderr)
        return EXIT_ENDPOINT_ERROR
    except (VerimasError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR
