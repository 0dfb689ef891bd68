"""
Corpus Evaluation
=================

Zero-shot vs reflected comparison over a directory of reports.

Corpus layout: one report per `<report_id>.txt`, with a companion
`<report_id>.script.json` for the scripted backend.

Features:
- Both arms per report (zero-shot baseline, full reflection loop)
- Concurrent reports, rows always ordered by report id
- Aggregate means per arm, percentage-point deltas, relative overall
  change and mean source-report grade
- Text table plus a machine-readable JSON artifact
"""

import asyncio
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from audit_trail import dumps_artifact, save_pipeline_result, save_zero_shot_result
from icd10_registry import Registry
from letter_config import CORPUS_REPORT_SUFFIX, CORPUS_SCRIPT_SUFFIX, DEFAULT_EVAL_CONCURRENCY
from logging_system import StructuredLogger
from providers import BaseProvider, GatewayConfig, ProviderError, ScriptedProvider
from readability import ReadabilityError, grade_of
from reflexion_engine import EngineConfig, MedicalReport, PipelineError, ReflexionEngine
from scoring import LetterScore

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "readability", "overall")
EVAL_JSON_NAME = "eval.json"
EVAL_TABLE_NAME = "eval.txt"


class EvalError(Exception):
    """Raised when an evaluation cannot produce a result."""

    def __init__(self, message: str, report_id: Optional[str] = None,
                 failures: Optional[Dict[str, str]] = None):
        self.message = message
        self.report_id = report_id
        self.failures = failures or {}
        super().__init__(message if report_id is None else f"{report_id}: {message}")


# =============================================================================
# Types
# =============================================================================

@dataclass(frozen=True)
class CorpusEntry:
    """One report file and its script."""
    report_id: str
    report_path: Path
    script_path: Optional[Path] = None


@dataclass(frozen=True)
class EvalRow:
    """Both arms' scores for one report; deltas are reflected minus zero-shot."""
    report_id: str
    zero_shot: LetterScore
    reflected: LetterScore
    source_grade: Optional[float] = None
    trials_used: int = 0

    @property
    def deltas(self) -> Dict[str, float]:
        return {m: getattr(self.reflected, m) - getattr(self.zero_shot, m) for m in METRICS}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report_id": self.report_id,
            "zero_shot": self.zero_shot.to_dict(),
            "reflected": self.reflected.to_dict(),
            "deltas": self.deltas,
            "source_grade": self.source_grade,
            "trials_used": self.trials_used,
        }


@dataclass(frozen=True)
class EvalAggregate:
    """
    Means over all complete rows.

    delta_points are differences of the [0, 1] means times 100.
    relative_overall_change is the reflected mean overall relative to the
    zero-shot mean, in percent (None when the zero-shot mean is 0).
    """
    n_reports: int
    zero_shot: Dict[str, float]
    reflected: Dict[str, float]
    delta_points: Dict[str, float]
    relative_overall_change: Optional[float]
    mean_source_grade: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_reports": self.n_reports,
            "zero_shot": self.zero_shot,
            "reflected": self.reflected,
            "delta_points": self.delta_points,
            "relative_overall_change": self.relative_overall_change,
            "mean_source_grade": self.mean_source_grade,
        }


@dataclass
class EvalResult:
    rows: List[EvalRow]
    aggregate: EvalAggregate
    failures: Dict[str, Dict[str, str]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "aggregate": self.aggregate.to_dict(),
            "failures": {k: self.failures[k] for k in sorted(self.failures)},
            "delta_convention": "percentage points: (reflected mean - zero-shot mean) x 100",
        }


ProviderFactory = Callable[[CorpusEntry], BaseProvider]


# =============================================================================
# Corpus
# =============================================================================

def discover_corpus(corpus_dir: Path) -> List[CorpusEntry]:
    """
    Reports in corpus_dir, sorted by report id.

    Raises:
        EvalError: directory missing or holding no reports
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise EvalError(f"Corpus directory not found: {corpus_dir}")

    entries = []
    for path in sorted(corpus_dir.glob(f"*{CORPUS_REPORT_SUFFIX}")):
        report_id = path.name[: -len(CORPUS_REPORT_SUFFIX)]
        script = corpus_dir / f"{report_id}{CORPUS_SCRIPT_SUFFIX}"
        entries.append(CorpusEntry(
            report_id=report_id,
            report_path=path,
            script_path=script if script.is_file() else None,
        ))

    if not entries:
        raise EvalError(f"empty corpus: no *{CORPUS_REPORT_SUFFIX} reports in {corpus_dir}")
    return entries


def scripted_provider_for(entry: CorpusEntry) -> BaseProvider:
    """Default factory: the report's companion script."""
    if entry.script_path is None:
        raise ProviderError("scripted", f"no {CORPUS_SCRIPT_SUFFIX} script for {entry.report_id}")
    return ScriptedProvider.from_file(entry.script_path)


# =============================================================================
# Aggregation
# =============================================================================

def _mean(values: List[float]) -> float:
    return statistics.fmean(values)


def aggregate_rows(rows: List[EvalRow]) -> EvalAggregate:
    """
    Arithmetic means of the rows.

    Raises:
        EvalError: no rows
    """
    if not rows:
        raise EvalError("no complete rows to aggregate")

    zero_shot = {m: _mean([getattr(r.zero_shot, m) for r in rows]) for m in METRICS}
    reflected = {m: _mean([getattr(r.reflected, m) for r in rows]) for m in METRICS}
    zero_shot["grade"] = _mean([r.zero_shot.grade for r in rows])
    reflected["grade"] = _mean([r.reflected.grade for r in rows])

    relative = None
    if zero_shot["overall"] > 0:
        relative = (reflected["overall"] / zero_shot["overall"] - 1.0) * 100

    source_grades = [r.source_grade for r in rows if r.source_grade is not None]
    return EvalAggregate(
        n_reports=len(rows),
        zero_shot=zero_shot,
        reflected=reflected,
        delta_points={m: (reflected[m] - zero_shot[m]) * 100 for m in METRICS},
        relative_overall_change=relative,
        mean_source_grade=_mean(source_grades) if source_grades else None,
    )


# =============================================================================
# Runner
# =============================================================================

async def evaluate_report(
    entry: CorpusEntry,
    registry: Registry,
    engine_config: EngineConfig,
    gateway: GatewayConfig,
    provider_factory: ProviderFactory = scripted_provider_for,
    events: Optional[StructuredLogger] = None,
    artifacts_dir: Optional[Path] = None,
) -> EvalRow:
    """
    Run both arms on one report.

    Raises:
        EvalError: either arm failed; message names the failed arm(s)
    """
    try:
        report = MedicalReport.from_file(entry.report_path)
        provider = provider_factory(entry)
    except (PipelineError, ProviderError) as e:
        raise EvalError(f"both arms failed: {e}", entry.report_id)

    engine = ReflexionEngine(provider, registry, engine_config, gateway, events)
    failures: Dict[str, str] = {}
    zero_shot = reflected = None
    try:
        try:
            zero_shot = await engine.run_zero_shot(report)
        except PipelineError as e:
            failures["zero_shot"] = str(e)
        try:
            reflected = await engine.run(report)
        except PipelineError as e:
            failures["reflected"] = str(e)
    finally:
        await provider.aclose()

    if failures:
        arms = " and ".join(sorted(failures))
        raise EvalError(
            f"{arms} failed: " + "; ".join(failures.values()), entry.report_id, failures
        )

    if artifacts_dir is not None:
        save_zero_shot_result(artifacts_dir, zero_shot)
        save_pipeline_result(artifacts_dir, reflected)

    try:
        source_grade = grade_of(report.body)
    except ReadabilityError:
        source_grade = None

    return EvalRow(
        report_id=entry.report_id,
        zero_shot=zero_shot.score,
        reflected=reflected.best_score,
        source_grade=source_grade,
        trials_used=len(reflected.trials),
    )


async def run_eval(
    corpus_dir: Path,
    registry: Registry,
    engine_config: EngineConfig,
    gateway: GatewayConfig,
    provider_factory: ProviderFactory = scripted_provider_for,
    concurrency: int = DEFAULT_EVAL_CONCURRENCY,
    events: Optional[StructuredLogger] = None,
    artifacts_dir: Optional[Path] = None,
) -> EvalResult:
    """
    Evaluate every report in the corpus.

    A report where only one arm fails is left out of the rows and recorded
    under failures.

    Raises:
        EvalError: empty corpus, or a report whose arms both failed
    """
    entries = discover_corpus(corpus_dir)
    semaphore = asyncio.Semaphore(max(concurrency, 1))

    async def bounded(entry: CorpusEntry) -> EvalRow:
        async with semaphore:
            return await evaluate_report(
                entry, registry, engine_config, gateway, provider_factory, events, artifacts_dir
            )

    outcomes = await asyncio.gather(*(bounded(e) for e in entries), return_exceptions=True)

    rows: List[EvalRow] = []
    failures: Dict[str, Dict[str, str]] = {}
    for entry, outcome in zip(entries, outcomes):
        if isinstance(outcome, EvalRow):
            rows.append(outcome)
            continue
        if not isinstance(outcome, EvalError):
            raise outcome
        if len(outcome.failures) != 1:
            raise outcome
        logger.warning(f"Excluding {entry.report_id}: {outcome.message}")
        failures[entry.report_id] = outcome.failures

    rows.sort(key=lambda r: r.report_id)
    return EvalResult(rows=rows, aggregate=aggregate_rows(rows), failures=failures)


# =============================================================================
# Output
# =============================================================================

def format_eval_table(result: EvalResult) -> str:
    """Fixed-width text table: one row per report plus the mean row."""
    header = (
        f"{'report':<20} {'zs_acc':>7} {'rf_acc':>7} {'zs_read':>7} {'rf_read':>7} "
        f"{'zs_all':>7} {'rf_all':>7} {'d_all':>7} {'src_fk':>7}"
    )
    lines = [header, "-" * len(header)]

    def fmt(value: Optional[float]) -> str:
        return f"{value:>7.3f}" if value is not None else f"{'-':>7}"

    for row in result.rows:
        lines.append(
            f"{row.report_id:<20} {fmt(row.zero_shot.accuracy)} {fmt(row.reflected.accuracy)} "
            f"{fmt(row.zero_shot.readability)} {fmt(row.reflected.readability)} "
            f"{fmt(row.zero_shot.overall)} {fmt(row.reflected.overall)} "
            f"{fmt(row.deltas['overall'])} {fmt(row.source_grade)}"
        )

    agg = result.aggregate
    lines.append("-" * len(header))
    lines.append(
        f"{'MEAN':<20} {fmt(agg.zero_shot['accuracy'])} {fmt(agg.reflected['accuracy'])} "
        f"{fmt(agg.zero_shot['readability'])} {fmt(agg.reflected['readability'])} "
        f"{fmt(agg.zero_shot['overall'])} {fmt(agg.reflected['overall'])} "
        f"{fmt(agg.reflected['overall'] - agg.zero_shot['overall'])} {fmt(agg.mean_source_grade)}"
    )
    lines.append("")
    lines.append(
        "Deltas (percentage points): "
        + ", ".join(f"{m} {agg.delta_points[m]:+.2f}" for m in METRICS)
    )
    if agg.relative_overall_change is not None:
        lines.append(f"Relative overall change: {agg.relative_overall_change:+.2f}%")
    for report_id in sorted(result.failures):
        arms = ", ".join(sorted(result.failures[report_id]))
        lines.append(f"Excluded {report_id}: {arms} failed")
    return "\n".join(lines) + "\n"


def write_eval_outputs(output_dir: Path, result: EvalResult) -> Dict[str, Path]:
    """Write eval.json and eval.txt; both are byte-stable for identical results."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    json_path = output_dir / EVAL_JSON_NAME
    table_path = output_dir / EVAL_TABLE_NAME
    json_path.write_text(dumps_artifact(result.to_dict()), encoding='utf-8')
    table_path.write_text(format_eval_table(result), encoding='utf-8')
    return {"json": json_path, "table": table_path}
