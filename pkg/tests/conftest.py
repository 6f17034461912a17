"""
Shared fixtures: a throwaway workspace holding one domain, the prompts and the
recorded LLM responses, plus deterministic clock and probe objects.
"""

import json
import shutil
from datetime import datetime, timezone
from pathlib import Path
from types import SimpleNamespace

import pytest

from clock import TickingClock
from config import load_config, resolve_domain_paths
from llm_client import FixtureBackend
from resource_monitor import StaticProbe

PROJECT_DIR = Path(__file__).resolve().parent.parent
START = datetime(2025, 10, 29, 10, 0, 0, tzinfo=timezone.utc)

WORKSPACE_CONF = """\
data_type=air_quality
data_root=data
prompts_root=prompts
output_root=output
logs_root=logs
llm_mode=fixture
llm_fixture_dir=fixtures/air_quality
llm_model_id=gemma3:4b
batch_size_k=2
max_fix_attempts_A=2
llm_call_timeout_s=30
validation_exec_timeout_s=30
script_runtime_cmd='{python} {script} {data}'
"""


def write_fixture_manifest(fixture_dir, entries):
    """Replace the fixture manifest with the given entries."""
    path = Path(fixture_dir) / "manifest.json"
    path.write_text(json.dumps({"entries": entries}, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def clock():
    return TickingClock(START)


@pytest.fixture
def probe():
    return StaticProbe()


@pytest.fixture
def workspace(tmp_path):
    """
    A self-contained project folder in fixture mode:
    data/air_quality, prompts/, fixtures/air_quality and lei.conf.
    """
    root = tmp_path / "lei"
    shutil.copytree(PROJECT_DIR / "data" / "air_quality", root / "data" / "air_quality")
    shutil.copytree(PROJECT_DIR / "prompts", root / "prompts")
    shutil.copytree(PROJECT_DIR / "fixtures" / "air_quality", root / "fixtures" / "air_quality")
    config_path = root / "lei.conf"
    config_path.write_text(WORKSPACE_CONF, encoding="utf-8")

    def load(**overrides):
        return load_config(config_path, env={}, overrides=overrides)

    cfg = load()
    return SimpleNamespace(
        root=root,
        config_path=config_path,
        fixture_dir=root / "fixtures" / "air_quality",
        load=load,
        cfg=cfg,
        paths=resolve_domain_paths(cfg),
    )


@pytest.fixture
def fixture_backend(workspace):
    return FixtureBackend(workspace.fixture_dir)
