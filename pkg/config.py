"""
Configuration for the LEI edge orchestrator.
Contains process settings (from environment), the pipeline configuration
loader, and domain path resolution.
"""

import logging
import os
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple
from urllib.parse import urlparse

from dotenv import dotenv_values, load_dotenv

from errors import DomainNotFound, InvariantViolation, MissingFile, ParseError

logger = logging.getLogger(__name__)

# Only variables that aren't already set are loaded from .env
if os.path.exists(".env"):
    if load_dotenv(".env", override=False):
        logger.info("Loaded environment variables from .env file")


def get_env_variable(key: str, default: str = None) -> str:
    """
    Get environment variable with fallback support.

    Priority order:
    1. Actual environment variables (including those loaded from .env)
    2. Default value
    """
    return os.environ.get(key, default)


class Paths:
    """File paths configuration."""

    PROJECT_DIR = os.path.dirname(os.path.abspath(__file__))

    LOGS_DIR = os.path.join(PROJECT_DIR, "logs")

    # Pipeline config file used when --config is not given
    DEFAULT_CONFIG_FILE = get_env_variable(
        "LEI_CONFIG", os.path.join(PROJECT_DIR, "lei.conf")
    )

    # Domain folder layout
    SAMPLE_FILE = "sample_data.csv"
    METADATA_FILE = "meta_data.json"
    CONTEXT_FILE = "context.txt"
    TASKS_LIST_FILE = "tasks_list.json"
    RAW_DATA_FILE = "raw_data.csv"
    SOURCE_FILE = "source.json"
    REQUIRED_DOMAIN_FILES = [SAMPLE_FILE, METADATA_FILE, CONTEXT_FILE]

    # Resource statistics shared between components
    RESOURCE_SUMMARY_FILE = "resource_usage_summary.json"

    # Pipeline logs, relative to logs_root
    EXCHANGE_LOG = "llm_exchanges.jsonl"
    VALIDATION_HISTORY_LOG = "validation_history.jsonl"
    CODEGEN_FAILURE_LOG = "codegen_failures.jsonl"
    STEP_TIMINGS_LOG = "step_timings.jsonl"
    STEP_RESOURCES_LOG = "step_resources.jsonl"
    RUNS_DIR = "runs"
    RUN_COUNTER_FILE = "run_counter"
    REPORT_FILE = "report.json"
    TOKEN_RATES_FILE = "token_rates.csv"


class AppConfig:
    """Daemon and process-level settings."""

    DEBUG = get_env_variable("DEBUG", "False").lower() == "true"
    PORT = int(get_env_variable("PORT", "5000"))

    API_VERSION = get_env_variable("API_VERSION", "v1")
    API_PREFIX = f"/api/{API_VERSION}"

    # Required for API endpoints authentication
    API_KEY = get_env_variable("API_KEY")

    LOG_LEVEL = get_env_variable("LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOGS_DIR = Paths.LOGS_DIR

    # Daemon memory guard (in MB)
    MEMORY_LIMIT_MB = int(get_env_variable("MEMORY_LIMIT_MB", "300"))

    # Environment override for the domain selector
    DATA_TYPE_ENV = "LEI_DATA_TYPE"

    # Static API key for the raw data source, appended as a query parameter
    SOURCE_API_KEY = get_env_variable("LEI_SOURCE_API_KEY")


class PipelineDefaults:
    """Defaults applied to keys absent from the pipeline config file."""

    DATA_ROOT = "data"
    PROMPTS_ROOT = "prompts"
    OUTPUT_ROOT = "output"
    LOGS_ROOT = "logs"

    LLM_BASE_URL = "http://localhost:11434"
    LLM_MODEL_ID = "gemma3:4b"
    LLM_MODE = "live"

    # Two tasks per code-generation request
    BATCH_SIZE_K = 2
    # The validator calls the LLM at most twice per task
    MAX_FIX_ATTEMPTS_A = 2
    # Strict timer for every LLM call and every script execution
    LLM_CALL_TIMEOUT_S = 120.0
    VALIDATION_EXEC_TIMEOUT_S = 120.0

    SAMPLING_INTERVAL_S = 5.0
    WINDOWS_MIN = (1, 5, 10, 30)
    CPU_MAX_PCT = 80.0
    MEM_MIN_AVAILABLE_MB = 256.0

    SCRIPT_RUNTIME_CMD = "{python} {script} {data}"
    SCRIPT_EXTENSION = ".py"

    # Raw data source polled every 10 minutes
    POLL_INTERVAL_S = 600.0
    # Sample extracted from the raw store covers the most recent five minutes
    SAMPLE_WINDOW_MIN = 5.0


LLM_MODES = ("live", "fixture")


@dataclass(frozen=True)
class LlmBackendConfig:
    base_url: str = PipelineDefaults.LLM_BASE_URL
    model_id: str = PipelineDefaults.LLM_MODEL_ID
    mode: str = PipelineDefaults.LLM_MODE
    fixture_dir: Optional[Path] = None


@dataclass(frozen=True)
class PipelineConfig:
    data_type: str
    data_root: Path
    prompts_root: Path
    output_root: Path
    logs_root: Path
    backend: LlmBackendConfig = field(default_factory=LlmBackendConfig)
    batch_size_k: int = PipelineDefaults.BATCH_SIZE_K
    max_fix_attempts_A: int = PipelineDefaults.MAX_FIX_ATTEMPTS_A
    llm_call_timeout_s: float = PipelineDefaults.LLM_CALL_TIMEOUT_S
    validation_exec_timeout_s: float = PipelineDefaults.VALIDATION_EXEC_TIMEOUT_S
    sampling_interval_s: float = PipelineDefaults.SAMPLING_INTERVAL_S
    windows_min: Tuple[int, ...] = PipelineDefaults.WINDOWS_MIN
    cpu_max_pct: float = PipelineDefaults.CPU_MAX_PCT
    mem_min_available_mb: float = PipelineDefaults.MEM_MIN_AVAILABLE_MB
    script_runtime_cmd: str = PipelineDefaults.SCRIPT_RUNTIME_CMD
    script_extension: str = PipelineDefaults.SCRIPT_EXTENSION
    poll_interval_s: float = PipelineDefaults.POLL_INTERVAL_S
    sample_window_min: float = PipelineDefaults.SAMPLE_WINDOW_MIN

    @property
    def domain_dir(self) -> Path:
        return self.data_root / self.data_type


@dataclass(frozen=True)
class DomainPaths:
    domain_dir: Path
    sample: Path
    metadata: Path
    context: Path
    tasks_list: Path
    tasks_list_present: bool
    raw_data: Path
    source: Path
    scripts_dir: Path
    summaries_dir: Path
    repository_dir: Path
    resource_summary: Path


# File key -> (target, converter). Targets prefixed with "backend." live on
# LlmBackendConfig.
_PATH_KEYS = ("data_root", "prompts_root", "output_root", "logs_root")
_BACKEND_KEYS = {
    "llm_base_url": "base_url",
    "llm_model_id": "model_id",
    "llm_mode": "mode",
    "llm_fixture_dir": "fixture_dir",
}
_INT_KEYS = ("batch_size_k", "max_fix_attempts_a")
_FLOAT_KEYS = (
    "llm_call_timeout_s",
    "validation_exec_timeout_s",
    "sampling_interval_s",
    "cpu_max_pct",
    "mem_min_available_mb",
    "poll_interval_s",
    "sample_window_min",
)
_STR_KEYS = ("data_type", "script_runtime_cmd", "script_extension")
_KNOWN_KEYS = set(_PATH_KEYS) | set(_BACKEND_KEYS) | set(_INT_KEYS) | set(_FLOAT_KEYS) | set(_STR_KEYS) | {"windows_min"}

_LINE_PATTERN = re.compile(r"^\s*(?:export\s+)?([A-Za-z_][A-Za-z0-9_]*)\s*=")


def _check_syntax(text: str) -> None:
    """Reject lines that are not blank, comments, or key=value."""
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = _LINE_PATTERN.match(line)
        if not match:
            raise ParseError("Expected 'key=value'", line=line_no)
        key = match.group(1).lower()
        if key not in _KNOWN_KEYS:
            raise ParseError("Unknown configuration key", line=line_no, field=key)


def _line_of(text: str, key: str) -> Optional[int]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        match = _LINE_PATTERN.match(line)
        if match and match.group(1).lower() == key:
            return line_no
    return None


def _resolve_path(value: str, base_dir: Path) -> Path:
    path = Path(os.path.expanduser(value))
    if not path.is_absolute():
        path = base_dir / path
    return path.resolve()


def _parse_windows(value: str) -> Tuple[int, ...]:
    parts = [p.strip() for p in value.replace(";", ",").split(",") if p.strip()]
    return tuple(int(float(p)) if float(p).is_integer() else float(p) for p in parts)


def load_config(
    path,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Dict[str, object]] = None,
) -> PipelineConfig:
    """
    Load the pipeline configuration from a key=value document.

    Args:
        path: Config file path
        env: Environment used for the LEI_DATA_TYPE override (defaults to os.environ)
        overrides: Values that win over both file and environment
            (keys: data_type, fixture_dir)

    Returns:
        A validated PipelineConfig with defaults applied and paths canonicalized

    Raises:
        MissingFile, ParseError, InvariantViolation, DomainNotFound
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise MissingFile(config_path, f"Config file not found: {config_path}")

    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise MissingFile(config_path, f"Config file unreadable: {e}")

    _check_syntax(text)
    raw = {
        k.lower(): v
        for k, v in dotenv_values(stream=_StringStream(text), interpolate=False).items()
    }
    base_dir = config_path.resolve().parent

    values: Dict[str, object] = {}
    backend_values: Dict[str, object] = {}
    for key, value in raw.items():
        if value is None:
            raise ParseError("Missing value", line=_line_of(text, key), field=key)
        value = value.strip()
        try:
            if key in _PATH_KEYS:
                values[key] = _resolve_path(value, base_dir)
            elif key in _BACKEND_KEYS:
                target = _BACKEND_KEYS[key]
                backend_values[target] = (
                    _resolve_path(value, base_dir) if target == "fixture_dir" else value
                )
            elif key in _INT_KEYS:
                target = "max_fix_attempts_A" if key == "max_fix_attempts_a" else key
                values[target] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "windows_min":
                values[key] = _parse_windows(value)
            else:
                values[key] = value
        except ValueError:
            raise ParseError(f"Invalid value '{value}'", line=_line_of(text, key), field=key)

    env = os.environ if env is None else env
    env_data_type = env.get(AppConfig.DATA_TYPE_ENV)
    if env_data_type:
        logger.info(f"Data type overridden from environment: {env_data_type}")
        values["data_type"] = env_data_type

    overrides = overrides or {}
    if overrides.get("data_type"):
        values["data_type"] = overrides["data_type"]
    if overrides.get("fixture_dir"):
        backend_values["mode"] = "fixture"
        backend_values["fixture_dir"] = Path(overrides["fixture_dir"]).resolve()

    for key, default in (
        ("data_root", PipelineDefaults.DATA_ROOT),
        ("prompts_root", PipelineDefaults.PROMPTS_ROOT),
        ("output_root", PipelineDefaults.OUTPUT_ROOT),
        ("logs_root", PipelineDefaults.LOGS_ROOT),
    ):
        values.setdefault(key, _resolve_path(default, base_dir))

    if "data_type" not in values or not values["data_type"]:
        raise InvariantViolation("data_type", "data_type is required")

    cfg = PipelineConfig(backend=LlmBackendConfig(**backend_values), **values)
    validate_config(cfg)
    return cfg


class _StringStream:
    """Minimal text stream for dotenv_values."""

    def __init__(self, text: str):
        self._text = text

    def read(self, *args) -> str:
        return self._text

    def __iter__(self):
        return iter(self._text.splitlines(keepends=True))


def validate_config(cfg: PipelineConfig) -> None:
    """Check every PipelineConfig invariant; raise InvariantViolation naming the field."""
    if cfg.batch_size_k < 1:
        raise InvariantViolation("batch_size_k", "batch_size_k must be >= 1")
    if cfg.max_fix_attempts_A < 0:
        raise InvariantViolation("max_fix_attempts_A", "max_fix_attempts_A must be >= 0")
    for name in (
        "llm_call_timeout_s",
        "validation_exec_timeout_s",
        "sampling_interval_s",
        "poll_interval_s",
        "sample_window_min",
    ):
        if getattr(cfg, name) <= 0:
            raise InvariantViolation(name, f"{name} must be > 0")
    if not cfg.windows_min:
        raise InvariantViolation("windows_min", "windows_min must not be empty")
    if any(w <= 0 for w in cfg.windows_min) or any(
        b <= a for a, b in zip(cfg.windows_min, cfg.windows_min[1:])
    ):
        raise InvariantViolation("windows_min", "windows_min must be positive and strictly increasing")
    if not 0 < cfg.cpu_max_pct <= 100:
        raise InvariantViolation("cpu_max_pct", "cpu_max_pct must be in (0, 100]")
    if cfg.mem_min_available_mb < 0:
        raise InvariantViolation("mem_min_available_mb", "mem_min_available_mb must be >= 0")
    if "{script}" not in cfg.script_runtime_cmd:
        raise InvariantViolation("script_runtime_cmd", "script_runtime_cmd must contain {script}")
    if not cfg.script_extension.startswith("."):
        raise InvariantViolation("script_extension", "script_extension must start with '.'")

    backend = cfg.backend
    if backend.mode not in LLM_MODES:
        raise InvariantViolation("llm_mode", f"llm_mode must be one of {', '.join(LLM_MODES)}")
    if backend.mode == "fixture":
        if backend.fixture_dir is None or not Path(backend.fixture_dir).is_dir():
            raise InvariantViolation("llm_fixture_dir", "fixture mode requires an existing llm_fixture_dir")
    else:
        parsed = urlparse(backend.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise InvariantViolation("llm_base_url", f"Invalid URL: {backend.base_url}")

    domain_dir = cfg.domain_dir
    if not domain_dir.is_dir():
        raise DomainNotFound(cfg.data_type)
    missing = [name for name in Paths.REQUIRED_DOMAIN_FILES if not (domain_dir / name).is_file()]
    if missing:
        raise DomainNotFound(
            cfg.data_type,
            f"Domain folder '{domain_dir}' is missing: {', '.join(missing)}",
        )


def dump_config(cfg: PipelineConfig, path) -> None:
    """Write cfg back as a canonical key=value document."""
    lines = [
        f"data_type='{cfg.data_type}'",
        f"data_root='{cfg.data_root}'",
        f"prompts_root='{cfg.prompts_root}'",
        f"output_root='{cfg.output_root}'",
        f"logs_root='{cfg.logs_root}'",
        f"llm_base_url='{cfg.backend.base_url}'",
        f"llm_model_id='{cfg.backend.model_id}'",
        f"llm_mode='{cfg.backend.mode}'",
    ]
    if cfg.backend.fixture_dir is not None:
        lines.append(f"llm_fixture_dir='{cfg.backend.fixture_dir}'")
    lines += [
        f"batch_size_k={cfg.batch_size_k}",
        f"max_fix_attempts_A={cfg.max_fix_attempts_A}",
        f"llm_call_timeout_s={cfg.llm_call_timeout_s!r}",
        f"validation_exec_timeout_s={cfg.validation_exec_timeout_s!r}",
        f"sampling_interval_s={cfg.sampling_interval_s!r}",
        f"windows_min={','.join(str(w) for w in cfg.windows_min)}",
        f"cpu_max_pct={cfg.cpu_max_pct!r}",
        f"mem_min_available_mb={cfg.mem_min_available_mb!r}",
        f"script_runtime_cmd='{cfg.script_runtime_cmd}'",
        f"script_extension='{cfg.script_extension}'",
        f"poll_interval_s={cfg.poll_interval_s!r}",
        f"sample_window_min={cfg.sample_window_min!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_domain_paths(cfg: PipelineConfig) -> DomainPaths:
    """Resolve every artifact path for the configured domain."""
    domain_dir = cfg.domain_dir.resolve()
    if not domain_dir.is_dir():
        raise DomainNotFound(cfg.data_type)

    tasks_list = domain_dir / Paths.TASKS_LIST_FILE
    scripts_dir = (cfg.output_root / cfg.data_type).resolve()
    return DomainPaths(
        domain_dir=domain_dir,
        sample=domain_dir / Paths.SAMPLE_FILE,
        metadata=domain_dir / Paths.METADATA_FILE,
        context=domain_dir / Paths.CONTEXT_FILE,
        tasks_list=tasks_list,
        tasks_list_present=tasks_list.is_file(),
        raw_data=domain_dir / Paths.RAW_DATA_FILE,
        source=domain_dir / Paths.SOURCE_FILE,
        scripts_dir=scripts_dir,
        summaries_dir=scripts_dir / "summaries",
        repository_dir=scripts_dir / "repository",
        resource_summary=cfg.output_root.resolve() / Paths.RESOURCE_SUMMARY_FILE,
    )


def with_overrides(cfg: PipelineConfig, **changes) -> PipelineConfig:
    """Return a validated copy of cfg with the given fields replaced."""
    updated = replace(cfg, **changes)
    validate_config(updated)
    return updated


def setup_logging(logs_dir=None, level: str = None) -> None:
    """Configure root logging: file handler under logs_dir plus stderr."""
    logs_dir = logs_dir or AppConfig.LOGS_DIR
    os.makedirs(logs_dir, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, (level or AppConfig.LOG_LEVEL).upper(), logging.INFO),
        format=AppConfig.LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(logs_dir, "lei.log"), encoding="utf-8"),
            logging.StreamHandler(sys.stderr),
        ],
    )
