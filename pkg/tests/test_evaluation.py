"""
Evaluation Tests
================

Tests for corpus discovery, both-arm evaluation, aggregation and the
eval outputs, over a generated 16-report scripted corpus.
"""

import json

import pytest

from audit_trail import audit_path, zero_shot_path
from evaluation import (
    EvalError,
    EvalRow,
    aggregate_rows,
    discover_corpus,
    format_eval_table,
    run_eval,
    write_eval_outputs,
)
from providers import GatewayConfig
from readability import grade_of, readability_score
from reflexion_engine import EngineConfig
from scoring import LetterScore, overall_score

from tests.helpers import LETTER_TEXT, build_corpus, write_script

LETTER_READABILITY = readability_score(grade_of(LETTER_TEXT))


async def evaluate(corpus_dir, registry, **kwargs):
    kwargs.setdefault("concurrency", 4)
    return await run_eval(corpus_dir, registry, EngineConfig(), GatewayConfig(backend="scripted"), **kwargs)


class TestDiscoverCorpus:
    """Tests for discover_corpus."""

    def test_sorted_with_scripts(self, tmp_path):
        """Reports come back sorted with their scripts attached."""
        build_corpus(tmp_path, n_reports=3)
        entries = discover_corpus(tmp_path)
        assert [e.report_id for e in entries] == ["report_00", "report_01", "report_02"]
        assert all(e.script_path is not None for e in entries)

    def test_empty_corpus(self, tmp_path):
        """A directory without reports is an error."""
        with pytest.raises(EvalError, match="empty corpus"):
            discover_corpus(tmp_path)

    def test_missing_directory(self, tmp_path):
        """A missing directory is an error."""
        with pytest.raises(EvalError, match="not found"):
            discover_corpus(tmp_path / "absent")


class TestAggregateRows:
    """Tests for aggregate_rows."""

    def row(self, report_id, zs_acc, rf_acc) -> EvalRow:
        make = lambda acc: LetterScore(accuracy=acc, grade=6.0, readability=1.0,
                                       overall=overall_score(1.0, acc))
        return EvalRow(report_id, make(zs_acc), make(rf_acc), source_grade=11.0)

    def test_means_and_deltas(self):
        """Means are arithmetic; deltas are percentage points."""
        agg = aggregate_rows([self.row("a", 0.5, 1.0), self.row("b", 0.0, 0.5)])
        assert agg.zero_shot["accuracy"] == pytest.approx(0.25)
        assert agg.reflected["accuracy"] == pytest.approx(0.75)
        assert agg.delta_points["accuracy"] == pytest.approx(50.0)
        assert agg.delta_points["readability"] == pytest.approx(0.0)
        assert agg.mean_source_grade == pytest.approx(11.0)

    def test_relative_change(self):
        """Relative overall change is in percent of the zero-shot mean."""
        agg = aggregate_rows([self.row("a", 0.5, 1.0)])
        assert agg.relative_overall_change == pytest.approx((1.0 / 0.65 - 1.0) * 100)

    def test_no_rows(self):
        """Aggregating nothing is an error."""
        with pytest.raises(EvalError):
            aggregate_rows([])


class TestRunEval:
    """End-to-end corpus evaluation with the scripted backend."""

    @pytest.mark.asyncio
    async def test_sixteen_reports(self, tmp_path, registry):
        """Every report gives a row; reflection recovers the missing codes."""
        ids = build_corpus(tmp_path / "corpus", n_reports=16)
        result = await evaluate(tmp_path / "corpus", registry)

        assert [r.report_id for r in result.rows] == ids
        assert result.failures == {}
        for row in result.rows:
            assert row.zero_shot.accuracy == 0.5
            assert row.reflected.accuracy == 1.0
            assert row.trials_used == 2
            assert row.source_grade is not None

        agg = result.aggregate
        assert agg.n_reports == 16
        assert agg.delta_points["accuracy"] == pytest.approx(50.0)
        assert agg.delta_points["overall"] == pytest.approx(35.0)
        assert agg.reflected["readability"] == pytest.approx(LETTER_READABILITY)

    @pytest.mark.asyncio
    async def test_means_match_hand_average(self, tmp_path, registry):
        """Aggregate means equal the plain average of the rows."""
        build_corpus(tmp_path, n_reports=16)
        result = await evaluate(tmp_path, registry)
        for metric in ("accuracy", "readability", "overall"):
            values = [getattr(r.reflected, metric) for r in result.rows]
            assert result.aggregate.reflected[metric] == pytest.approx(sum(values) / len(values), abs=1e-12)
        grades = [r.source_grade for r in result.rows]
        assert result.aggregate.mean_source_grade == pytest.approx(sum(grades) / len(grades), abs=1e-12)

    @pytest.mark.asyncio
    async def test_identical_arms(self, tmp_path, registry):
        """When trial 0 is already right, every delta is zero."""
        build_corpus(tmp_path, n_reports=4, identical_arms=True)
        result = await evaluate(tmp_path, registry)
        assert all(delta == pytest.approx(0.0, abs=1e-12) for delta in result.aggregate.delta_points.values())
        assert all(r.trials_used == 1 for r in result.rows)

    @pytest.mark.asyncio
    async def test_concurrency_does_not_change_result(self, tmp_path, registry):
        """Sequential and concurrent runs produce the same rows in the same order."""
        build_corpus(tmp_path, n_reports=8)
        sequential = await evaluate(tmp_path, registry, concurrency=1)
        concurrent = await evaluate(tmp_path, registry, concurrency=8)
        assert sequential.to_dict() == concurrent.to_dict()

    @pytest.mark.asyncio
    async def test_outputs_byte_identical(self, tmp_path, registry):
        """Two runs over the same corpus write identical eval.json and eval.txt."""
        build_corpus(tmp_path / "corpus", n_reports=6)
        first = write_eval_outputs(tmp_path / "a", await evaluate(tmp_path / "corpus", registry))
        second = write_eval_outputs(tmp_path / "b", await evaluate(tmp_path / "corpus", registry))
        assert first["json"].read_bytes() == second["json"].read_bytes()
        assert first["table"].read_bytes() == second["table"].read_bytes()

        data = json.loads(first["json"].read_text(encoding="utf-8"))
        assert data["aggregate"]["n_reports"] == 6
        assert "percentage points" in data["delta_convention"]

    @pytest.mark.asyncio
    async def test_one_arm_failure_excluded(self, tmp_path, registry):
        """A report whose reflected arm fails is left out and recorded."""
        build_corpus(tmp_path, n_reports=4)
        broken = tmp_path / "report_02.script.json"
        script = json.loads(broken.read_text(encoding="utf-8"))
        del script["generate_letter/1"]
        write_script(broken, script)

        result = await evaluate(tmp_path, registry)
        assert [r.report_id for r in result.rows] == ["report_00", "report_01", "report_03"]
        assert list(result.failures) == ["report_02"]
        assert list(result.failures["report_02"]) == ["reflected"]
        assert "Excluded report_02: reflected failed" in format_eval_table(result)

    @pytest.mark.asyncio
    async def test_both_arms_failure_raises(self, tmp_path, registry):
        """A report whose arms both fail aborts the evaluation."""
        build_corpus(tmp_path, n_reports=2)
        write_script(tmp_path / "report_01.script.json", {"extract_codes/0": "nothing useful"})
        with pytest.raises(EvalError) as exc_info:
            await evaluate(tmp_path, registry)
        assert exc_info.value.report_id == "report_01"
        assert set(exc_info.value.failures) == {"zero_shot", "reflected"}

    @pytest.mark.asyncio
    async def test_missing_script_raises(self, tmp_path, registry):
        """A report without a script cannot be evaluated with the default factory."""
        build_corpus(tmp_path, n_reports=2)
        (tmp_path / "report_00.script.json").unlink()
        with pytest.raises(EvalError, match="report_00"):
            await evaluate(tmp_path, registry)

    @pytest.mark.asyncio
    async def test_artifacts_written(self, tmp_path, registry):
        """Per-report artifacts are saved for both arms."""
        build_corpus(tmp_path / "corpus", n_reports=2)
        artifacts = tmp_path / "reports"
        await evaluate(tmp_path / "corpus", registry, artifacts_dir=artifacts)
        for report_id in ("report_00", "report_01"):
            assert audit_path(artifacts, report_id).is_file()
            assert zero_shot_path(artifacts, report_id).is_file()

    @pytest.mark.asyncio
    async def test_table(self, tmp_path, registry):
        """The table has one line per report plus the mean row."""
        build_corpus(tmp_path, n_reports=3)
        table = format_eval_table(await evaluate(tmp_path, registry))
        assert "report_02" in table
        assert "MEAN" in table
        assert "Deltas (percentage points): accuracy +50.00" in table
