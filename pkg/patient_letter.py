#!/usr/bin/env python3
"""
Patient Letter CLI
==================

Operator surface for the patient-letter pipeline.

Commands:
- extract-codes: reference ICD-10 codes of a report
- readability:   FKGL grade and standardized score of a text file
- zero-shot:     single-prompt baseline letter
- reflect:       full reflection loop, optional FHIR push
- eval:          zero-shot vs reflected comparison over a corpus

Every command exits 0 iff its primary artifact was produced.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from audit_trail import AuditTrailError, dumps_artifact, save_pipeline_result, save_zero_shot_result
from evaluation import EvalError, run_eval, scripted_provider_for, write_eval_outputs, format_eval_table
from fhir_bridge import FhirClient, FhirError, FhirReportRef, FhirServerConfig
from icd10_registry import Registry, RegistryError, open_registry
from letter_config import DEFAULT_EVAL_CONCURRENCY
from letter_parser import ParseError
from logging_system import StructuredLogger, configure_console_logging, create_logger
from prompts import TemplateError
from providers import BaseProvider, ConfigValidationError, GatewayConfig, ProviderError, create_provider
from readability import (
    ReadabilityConfig,
    ReadabilityError,
    fkgl,
    readability_score,
    reference_grade,
    text_stats,
)
from reflexion_engine import MedicalReport, PipelineError, PipelineResult, ReflexionEngine, ReportSourceKind
from run_config import RUN_CONFIG_NAME, RunConfig, apply_overrides, load_run_config, save_run_config

# Load .env if available
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

logger = logging.getLogger(__name__)

HANDLED_ERRORS = (
    AuditTrailError,
    ConfigValidationError,
    EvalError,
    FhirError,
    ParseError,
    PipelineError,
    ProviderError,
    ReadabilityError,
    RegistryError,
    TemplateError,
    OSError,
)


class CommandContext:
    """Resolved config, registry and run logger for one invocation."""

    def __init__(self, config: RunConfig, registry: Registry, events: StructuredLogger):
        self.config = config
        self.registry = registry
        self.events = events


# =============================================================================
# Factories (patched in tests)
# =============================================================================

def build_provider(gateway: GatewayConfig) -> BaseProvider:
    return create_provider(gateway)


def build_fhir_client(config: FhirServerConfig, events: Optional[StructuredLogger] = None) -> FhirClient:
    return FhirClient(config, events=events)


# =============================================================================
# Helpers
# =============================================================================

def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    config = apply_overrides(config, args)
    errors = config.validate(require_script=args.command != "eval")
    if errors:
        raise ConfigValidationError(errors)
    return config


def _open_context(args: argparse.Namespace) -> CommandContext:
    config = _resolve_config(args)
    registry = open_registry(config.registry_path)
    events = create_logger(
        config.output_dir,
        command=args.command,
        log_level="DEBUG" if args.verbose else "INFO",
        console=not args.json,
    )
    return CommandContext(config, registry, events)


async def _load_report(args: argparse.Namespace, ctx: CommandContext,
                       fhir: Optional[FhirClient]) -> MedicalReport:
    if getattr(args, "report", None):
        return MedicalReport.from_file(args.report)
    if getattr(args, "report_id", None):
        if fhir is None:
            raise FhirError("--report-id requires a FHIR server (--fhir-url or config 'fhir')")
        return await fhir.fetch_report(FhirReportRef(id=args.report_id))
    raise PipelineError("No report given: pass a report file or --report-id", stage="input")


def _emit(args: argparse.Namespace, data: Dict[str, Any], text: str) -> None:
    if args.json:
        sys.stdout.write(dumps_artifact(data))
    else:
        print(text)


def _score_lines(score) -> List[str]:
    lines = [
        f"Accuracy:    {score.accuracy:.4f}",
        f"Grade:       {score.grade:.2f}",
        f"Readability: {score.readability:.4f}",
        f"Overall:     {score.overall:.4f}",
    ]
    if score.missing_codes:
        lines.append(f"Missing:     {', '.join(sorted(score.missing_codes))}")
    if score.invalid_codes:
        lines.append(f"Invalid:     {', '.join(sorted(score.invalid_codes))}")
    return lines


# =============================================================================
# Commands
# =============================================================================

async def cmd_extract_codes(args: argparse.Namespace, ctx: CommandContext) -> int:
    """Print the report's validated reference codes."""
    provider = build_provider(ctx.config.gateway)
    fhir = build_fhir_client(ctx.config.fhir, ctx.events) if ctx.config.fhir else None
    try:
        await provider.validate()
        report = await _load_report(args, ctx, fhir)
        ctx.events.log_run_start(report.report_id, provider.name)
        engine = ReflexionEngine(provider, ctx.registry, ctx.config.engine, ctx.config.gateway, ctx.events)
        codes = await engine.extract_codes_with_descriptions(report)
    finally:
        await provider.aclose()
        if fhir:
            await fhir.aclose()

    rows = [{"code": code, "description": codes[code]} for code in sorted(codes)]
    text = "\n".join(f"{r['code']:<10} {r['description']}" for r in rows)
    _emit(args, {
        "report_id": report.report_id,
        "registry_version": ctx.registry.source_version,
        "codes": rows,
    }, text)
    return 0


def cmd_readability(args: argparse.Namespace) -> int:
    """Print FKGL and standardized readability for a text file."""
    text = Path(args.text).read_text(encoding="utf-8")
    stats = text_stats(text)
    grade = fkgl(stats)
    cfg = ReadabilityConfig(target_grade=args.target_grade) if args.target_grade is not None else ReadabilityConfig()
    score = readability_score(grade, cfg)
    reference = reference_grade(text)

    lines = [f"Grade (FKGL): {grade:.2f}", f"Readability:  {score:.3f} (target {cfg.target_grade:.1f})"]
    if reference is not None:
        lines.append(f"textstat FKGL: {reference:.2f}")
    _emit(args, {
        "grade": grade,
        "readability": score,
        "target_grade": cfg.target_grade,
        "stats": stats.to_dict(),
        "reference_grade": reference,
    }, "\n".join(lines))
    return 0


async def cmd_zero_shot(args: argparse.Namespace, ctx: CommandContext) -> int:
    """One generation call, no memory; scored like any candidate."""
    provider = build_provider(ctx.config.gateway)
    fhir = build_fhir_client(ctx.config.fhir, ctx.events) if ctx.config.fhir else None
    try:
        await provider.validate()
        report = await _load_report(args, ctx, fhir)
        ctx.events.log_run_start(report.report_id, provider.name)
        engine = ReflexionEngine(provider, ctx.registry, ctx.config.engine, ctx.config.gateway, ctx.events)
        result = await engine.run_zero_shot(report)
    finally:
        await provider.aclose()
        if fhir:
            await fhir.aclose()

    paths = save_zero_shot_result(ctx.config.output_dir, result)
    _emit(args, result.to_dict(), "\n".join(
        [result.letter.body, ""] + _score_lines(result.score) + [f"Saved: {paths['letter']}"]
    ))
    return 0


async def _push(fhir: FhirClient, result: PipelineResult,
                patient_ref: Optional[str] = None) -> Dict[str, Any]:
    report = result.report
    patient_ref = patient_ref or report.source.patient_ref
    if not patient_ref:
        raise FhirError(f"{report.report_id}: no patient reference to push to (use --patient-ref)")
    source_ref = None
    if report.source.kind == ReportSourceKind.FHIR and report.source.report_id:
        source_ref = f"DiagnosticReport/{report.source.report_id}"
    document_id = await fhir.push_letter(patient_ref, result.best_letter, result.best_score, source_ref)
    return {"document_id": document_id, "patient_ref": patient_ref}


async def cmd_reflect(args: argparse.Namespace, ctx: CommandContext) -> int:
    """Full loop; writes letter + audit trail, optionally pushes to FHIR."""
    provider = build_provider(ctx.config.gateway)
    fhir = build_fhir_client(ctx.config.fhir, ctx.events) if ctx.config.fhir else None
    output_dir = ctx.config.output_dir
    try:
        await provider.validate()
        report = await _load_report(args, ctx, fhir)
        ctx.events.log_run_start(report.report_id, provider.name, **ctx.config.engine.to_dict())
        engine = ReflexionEngine(provider, ctx.registry, ctx.config.engine, ctx.config.gateway, ctx.events)
        try:
            result = await engine.run(report)
        except PipelineError as e:
            if e.partial is not None:
                paths = save_pipeline_result(output_dir, e.partial, extra={
                    "failure": {"stage": e.stage, "trial_index": e.trial_index, "message": e.message},
                })
                print(f"Partial audit trail written: {paths['audit']}", file=sys.stderr)
            raise

        extra = None
        if args.push:
            if fhir is None:
                raise FhirError("--push requires a FHIR server (--fhir-url or config 'fhir')")
            extra = {"fhir_push": await _push(fhir, result, args.patient_ref)}
    finally:
        await provider.aclose()
        if fhir:
            await fhir.aclose()

    paths = save_pipeline_result(output_dir, result, extra=extra)
    save_run_config(output_dir / RUN_CONFIG_NAME, ctx.config)
    lines = [result.best_letter.body, ""] + _score_lines(result.best_score) + [
        f"Trials:      {len(result.trials)} ({result.stopped_reason.value})",
        f"Saved:       {paths['letter']}, {paths['audit']}",
    ]
    if extra:
        lines.append(f"DocumentReference/{extra['fhir_push']['document_id']}")
    data = result.to_dict()
    if extra:
        data.update(extra)
    _emit(args, data, "\n".join(lines))
    return 0


async def cmd_eval(args: argparse.Namespace, ctx: CommandContext) -> int:
    """Both arms over every report in the corpus."""
    config = ctx.config
    if config.gateway.backend == "scripted" and config.gateway.script_path is None:
        factory = scripted_provider_for
    else:
        def factory(entry):
            return build_provider(config.gateway)

    ctx.events.log_run_start(Path(args.corpus).name, config.gateway.backend)
    result = await run_eval(
        Path(args.corpus),
        ctx.registry,
        config.engine,
        config.gateway,
        provider_factory=factory,
        concurrency=args.concurrency,
        events=ctx.events,
        artifacts_dir=config.output_dir / "reports",
    )
    paths = write_eval_outputs(config.output_dir, result)
    save_run_config(config.output_dir / RUN_CONFIG_NAME, config)
    if args.json:
        sys.stdout.write(paths["json"].read_text(encoding="utf-8"))
    else:
        print(format_eval_table(result), end="")
        print(f"Saved: {paths['table']}, {paths['json']}")
    return 0


# =============================================================================
# Argument parsing
# =============================================================================

def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON run config")
    parser.add_argument("--backend", choices=["live", "scripted"], default=None, help="LLM backend")
    parser.add_argument("--script", type=Path, default=None, help="Script file for the scripted backend")
    parser.add_argument("--registry", type=Path, default=None, help="ICD-10-CM table (CODE<TAB>DESCRIPTION); default: simple-icd-10-cm code set")
    parser.add_argument("--n-candidates", type=int, default=None, help="Letters per trial")
    parser.add_argument("--max-trials", type=int, default=None, help="Maximum trials")
    parser.add_argument("--target-grade", type=float, default=None, help="Target FKGL grade")
    parser.add_argument("--weights", type=str, default=None, help="Readability,accuracy weights, e.g. 0.3,0.7")
    parser.add_argument("--fhir-url", type=str, default=None, help="FHIR R4 base URL")
    parser.add_argument("--output-dir", type=Path, default=None, help="Where letters, audits and logs go")
    parser.add_argument("--llm-reflection", action="store_true",
                        help="Rewrite feedback through the self_reflection template")
    parser.add_argument("--json", action="store_true", help="Machine-readable output on stdout")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patient_letter",
        description="Patient-friendly radiology letters with ICD-10 and readability reflection",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Reference codes of a report
  python patient_letter.py extract-codes report.txt --script report.script.json

  # Reading level of any text
  python patient_letter.py readability letter.txt

  # Reflection loop against the live endpoint, push the result
  python patient_letter.py reflect --report-id dr-42 --fhir-url https://fhir.example.org/r4 --push

  # Zero-shot vs reflected over a scripted corpus
  python patient_letter.py eval corpus/ --output-dir results/
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    extract = subparsers.add_parser("extract-codes", help="Extract reference ICD-10 codes")
    extract.add_argument("report", nargs="?", type=Path, help="Report text file")
    extract.add_argument("--report-id", type=str, default=None, help="DiagnosticReport id on the FHIR server")
    _add_run_flags(extract)

    readability = subparsers.add_parser("readability", help="FKGL grade of a text file")
    readability.add_argument("text", type=Path, help="Text file")
    readability.add_argument("--target-grade", type=float, default=None, help="Target FKGL grade")
    readability.add_argument("--json", action="store_true", help="Machine-readable output on stdout")
    readability.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    zero_shot = subparsers.add_parser("zero-shot", help="Single-prompt baseline letter")
    zero_shot.add_argument("report", nargs="?", type=Path, help="Report text file")
    zero_shot.add_argument("--report-id", type=str, default=None, help="DiagnosticReport id on the FHIR server")
    _add_run_flags(zero_shot)

    reflect = subparsers.add_parser("reflect", help="Full reflection loop")
    reflect.add_argument("report", nargs="?", type=Path, help="Report text file")
    reflect.add_argument("--report-id", type=str, default=None, help="DiagnosticReport id on the FHIR server")
    reflect.add_argument("--push", action="store_true", help="POST the letter as a DocumentReference")
    reflect.add_argument("--patient-ref", type=str, default=None,
                         help="Patient reference for --push when the report is a local file")
    _add_run_flags(reflect)

    evaluate = subparsers.add_parser("eval", help="Zero-shot vs reflected over a corpus")
    evaluate.add_argument("corpus", type=Path, help="Directory of <id>.txt reports and <id>.script.json scripts")
    evaluate.add_argument("--concurrency", type=int, default=DEFAULT_EVAL_CONCURRENCY, help="Reports processed at once")
    _add_run_flags(evaluate)
    evaluate.set_defaults(backend="scripted")

    return parser


COMMANDS = {
    "extract-codes": cmd_extract_codes,
    "zero-shot": cmd_zero_shot,
    "reflect": cmd_reflect,
    "eval": cmd_eval,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_console_logging(args.verbose)

    if args.command == "readability":
        try:
            return cmd_readability(args)
        except (ReadabilityError, OSError) as e:
            print(f"Error: {e}", file=sys.stderr)
            return 1

    ctx = None
    try:
        ctx = _open_context(args)
        code = asyncio.run(COMMANDS[args.command](args, ctx))
        ctx.events.log_run_end("ok" if code == 0 else "failed")
        return code
    except HANDLED_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        if ctx is not None:
            ctx.events.log_error(type(e).__name__, str(e))
            ctx.events.log_run_end("failed")
        return 1
    finally:
        if ctx is not None:
            ctx.events.close()


if __name__ == "__main__":
    sys.exit(main())
