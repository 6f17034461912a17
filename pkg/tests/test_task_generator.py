"""Tests for prompt templates and step 1 task generation."""

import json
from unittest.mock import MagicMock

import pytest

from code_generator import CODE_GENERATION_PLACEHOLDERS, CODE_GENERATION_TEMPLATE
from errors import MissingFile, StepFailed, UnresolvedPlaceholder
from ingestion import load_domain_bundle
from llm_client import OK, TIMEOUT, LlmClient, LlmExchange
from models import ResourceSummary, TaskSpec
from task_generator import (
    TASK_GENERATION_PLACEHOLDERS,
    TASK_GENERATION_TEMPLATE,
    PromptTemplate,
    aggregate_instruction,
    generate_tasks,
    merge_tasks,
    normalize_task_name,
    parse_task_list,
    run_task_generation,
)
from tests.conftest import START
from validator import VALIDATION_FIX_PLACEHOLDERS, VALIDATION_FIX_TEMPLATE


@pytest.fixture
def summary():
    return ResourceSummary(
        timestamp=START,
        cpu_cores=4,
        mem_available_mb=2048.0,
        cpu_avg_pct={"1m": 12.5, "5m": 10.0},
        mem_avg_pct={"1m": 40.0, "5m": 41.0},
    )


@pytest.fixture
def template(workspace):
    return PromptTemplate.load(workspace.cfg.prompts_root, TASK_GENERATION_TEMPLATE, TASK_GENERATION_PLACEHOLDERS)


def scripted_client(*responses, outcome=OK):
    """Client stub returning the given responses in order."""
    client = MagicMock(spec=LlmClient)
    client.complete.side_effect = [
        LlmExchange(instruction="i", response=text, usage=None, wall_duration_s=0.1, outcome=outcome)
        for text in responses
    ]
    return client


class TestPromptTemplate:
    def test_each_placeholder_exactly_once(self):
        template = PromptTemplate("t", "{a} and {a}", ("a",))
        with pytest.raises(UnresolvedPlaceholder) as exc:
            template.check()
        assert exc.value.placeholder == "a"

    def test_missing_value(self):
        with pytest.raises(UnresolvedPlaceholder):
            PromptTemplate("t", "{a} {b}", ("a", "b")).render({"a": "x"})

    def test_substituted_text_not_rescanned(self):
        rendered = PromptTemplate("t", "{a}|{b}", ("a", "b")).render({"a": "{b}", "b": "B"})
        assert rendered == "{b}|B"

    def test_unknown_braces_left_alone(self):
        rendered = PromptTemplate("t", '{a} {"code": ...}', ("a",)).render({"a": "x"})
        assert rendered == 'x {"code": ...}'

    def test_missing_template_file(self, tmp_path):
        with pytest.raises(MissingFile):
            PromptTemplate.load(tmp_path, "absent", ("a",))

    def test_shipped_templates_are_valid(self, workspace):
        for name, placeholders in (
            (TASK_GENERATION_TEMPLATE, TASK_GENERATION_PLACEHOLDERS),
            (CODE_GENERATION_TEMPLATE, CODE_GENERATION_PLACEHOLDERS),
            (VALIDATION_FIX_TEMPLATE, VALIDATION_FIX_PLACEHOLDERS),
        ):
            PromptTemplate.load(workspace.cfg.prompts_root, name, placeholders)


class TestAggregateInstruction:
    def test_sections_present_and_deterministic(self, workspace, template, summary):
        bundle = load_domain_bundle(workspace.paths)
        first = aggregate_instruction(bundle, template, summary)

        assert first == aggregate_instruction(bundle, template, summary)
        for label in ("SAMPLE_DATA", "METADATA", "CONTEXT", "RESOURCE_SUMMARY", "PREVIOUS_TASKS"):
            assert f"<<<{label}>>>" in first
            assert f"<<<END {label}>>>" in first
        assert "2025-10-29 09:44:43" in first
        assert '"1m": 12.5' in first

    def test_previous_tasks_rendered(self, workspace, template, summary):
        bundle = load_domain_bundle(workspace.paths)
        bundle.previous_tasks = [TaskSpec("aqi_poor_streak", "Longest poor streak.")]

        assert '"name": "aqi_poor_streak"' in aggregate_instruction(bundle, template, summary)


class TestTaskNames:
    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("pm25_spike_detector", "pm25_spike_detector"),
            ("Pollutant 24h Extremes", "pollutant_24h_extremes"),
            ("AqiPoorStreak", "aqi_poor_streak"),
            ("  no/no2 -- ratio!  ", "no_no2_ratio"),
        ],
    )
    def test_normalize(self, raw, expected):
        assert normalize_task_name(raw) == expected

    def test_length_capped(self):
        name = normalize_task_name("a" * 200)
        assert len(name) == 80

    def test_parse_drops_invalid_entries(self):
        result = parse_task_list(
            [
                {"name": "Good Task", "description": "  does   things "},
                {"name": "good_task", "description": "duplicate after normalization"},
                {"name": "no_description"},
                {"name": "!!!", "description": "nothing usable in the name"},
                "not an object",
            ]
        )

        assert result.tasks == [TaskSpec("good_task", "does things")]
        assert [d["index"] for d in result.dropped] == [1, 2, 3, 4]


class TestMergeTasks:
    def test_previous_order_kept_and_duplicates_dropped(self):
        previous = [TaskSpec("a", "1"), TaskSpec("b", "2")]
        new = [TaskSpec("B", "dup"), TaskSpec("c", "3"), TaskSpec("c", "again")]

        merged, fresh = merge_tasks(previous, new)
        assert [t.name for t in merged] == ["a", "b", "c"]
        assert fresh == [TaskSpec("c", "3")]

    def test_nothing_new(self):
        previous = [TaskSpec("a", "1")]
        assert merge_tasks(previous, [TaskSpec("a", "again")]) == (previous, [])


class TestGenerateTasks:
    def test_prose_response_fails_step(self):
        with pytest.raises(StepFailed, match="no JSON"):
            generate_tasks(scripted_client("I would suggest monitoring PM2.5 levels."), "instruction")

    def test_object_instead_of_array(self):
        with pytest.raises(StepFailed):
            generate_tasks(scripted_client('{"name": "a", "description": "b"}'), "instruction")

    def test_wrapped_tasks_key_accepted(self):
        result = generate_tasks(scripted_client('{"tasks": [{"name": "a", "description": "b"}]}'), "instruction")
        assert result.tasks == [TaskSpec("a", "b")]

    def test_timeout(self):
        with pytest.raises(StepFailed, match="llm_timeout"):
            generate_tasks(scripted_client(None, outcome=TIMEOUT), "instruction")


class TestRunTaskGeneration:
    def test_fixture_response(self, workspace, template, summary, fixture_backend, clock):
        client = LlmClient(fixture_backend, 5, clock)
        bundle = load_domain_bundle(workspace.paths)

        outcome = run_task_generation(workspace.paths, bundle, template, summary, client, run_id=1)

        names = [t.name for t in outcome.fresh]
        assert names == ["pollutant_24h_extremes_reporter", "traffic_freshness_indicator_no_no2_ratio", "aqi_poor_streak"]
        assert json.loads(outcome.tasks_list_path.read_text(encoding="utf-8")) == [t.to_dict() for t in outcome.merged]
        assert json.loads(outcome.new_tasks_path.read_text(encoding="utf-8")) == [t.to_dict() for t in outcome.fresh]
        assert outcome.new_tasks_path.parent == workspace.paths.summaries_dir

    def test_known_tasks_not_proposed_again(self, workspace, template, summary, fixture_backend, clock):
        client = LlmClient(fixture_backend, 5, clock)
        bundle = load_domain_bundle(workspace.paths)
        bundle.previous_tasks = [TaskSpec("aqi_poor_streak", "Known already.")]

        outcome = run_task_generation(workspace.paths, bundle, template, summary, client, run_id=1)

        assert "aqi_poor_streak" not in [t.name for t in outcome.fresh]
        assert [t.name for t in outcome.merged][0] == "aqi_poor_streak"
        assert len(outcome.merged) == 3
