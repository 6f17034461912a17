"""
Development setup script for the LEI edge orchestrator.
Checks the environment, the pipeline config, the domain folders and the LLM
backend.
"""

import shutil
import sys
from pathlib import Path

import requests
from dotenv import load_dotenv

from config import AppConfig, Paths, get_env_variable, load_config, resolve_domain_paths
from errors import LeiError

load_dotenv()

PROMPT_FILES = ["task_generation.txt", "code_generation.txt", "validation_fix.txt"]


def check_environment_variables() -> bool:
    print("\n🔧 ENVIRONMENT VARIABLES CHECK")
    print("=" * 50)
    ok = True

    if not get_env_variable("API_KEY"):
        print("✗ API_KEY: NOT SET (required for the daemon API)")
        ok = False
    else:
        print("✓ API_KEY: Configured")

    optional_env_vars = {
        "LOG_LEVEL": "INFO",
        "PORT": "5000",
        "LEI_CONFIG": Paths.DEFAULT_CONFIG_FILE,
        "LEI_DATA_TYPE": "(from config file)",
        "LEI_SOURCE_API_KEY": "(none)",
    }
    for var, default_value in optional_env_vars.items():
        if get_env_variable(var):
            print(f"✓ {var}: Custom value set")
        else:
            print(f"ℹ️  {var}: Using default ({default_value})")
    return ok


def check_pipeline_config():
    print("\n🧩 PIPELINE CONFIG CHECK")
    print("=" * 50)
    try:
        cfg = load_config(Paths.DEFAULT_CONFIG_FILE)
    except LeiError as e:
        print(f"✗ {Paths.DEFAULT_CONFIG_FILE}: {e}")
        return None

    print(f"✓ Config loaded: data_type={cfg.data_type}, mode={cfg.backend.mode}")
    paths = resolve_domain_paths(cfg)
    for name in Paths.REQUIRED_DOMAIN_FILES:
        print(f"✓ {paths.domain_dir.name}/{name}")
    for optional in (paths.tasks_list, paths.source, paths.raw_data):
        marker = "✓" if optional.is_file() else "ℹ️ "
        print(f"{marker} {paths.domain_dir.name}/{optional.name}{'' if optional.is_file() else ' (optional, absent)'}")

    missing = [name for name in PROMPT_FILES if not (Path(cfg.prompts_root) / name).is_file()]
    if missing:
        print(f"✗ Missing prompt templates: {', '.join(missing)}")
        return None
    print("✓ Prompt templates present")
    return cfg


def check_backend(cfg) -> bool:
    print("\n🤖 LLM BACKEND CHECK")
    print("=" * 50)
    if cfg.backend.mode == "fixture":
        print(f"ℹ️  Fixture mode: {cfg.backend.fixture_dir}")
        return True
    try:
        response = requests.get(cfg.backend.base_url.rstrip("/") + "/api/tags", timeout=5)
        response.raise_for_status()
        models = [m.get("name") for m in response.json().get("models", [])]
    except (requests.RequestException, ValueError) as e:
        print(f"✗ Backend not reachable at {cfg.backend.base_url}: {e}")
        return False
    if cfg.backend.model_id in models:
        print(f"✓ Model {cfg.backend.model_id} available")
        return True
    print(f"⚠️  Model {cfg.backend.model_id} not pulled; available: {', '.join(models) or 'none'}")
    return False


def check_setup() -> bool:
    print("LEI Edge Orchestrator - Setup Check")
    print("=" * 50)
    env_ok = check_environment_variables()
    cfg = check_pipeline_config()
    backend_ok = check_backend(cfg) if cfg else False
    return env_ok and cfg is not None and backend_ok


def setup_development():
    print("Setting up development environment...")
    for directory in (AppConfig.LOGS_DIR, Path(Paths.PROJECT_DIR) / "output"):
        Path(directory).mkdir(parents=True, exist_ok=True)
        print(f"Created {directory}")

    env_example = Path(Paths.PROJECT_DIR) / ".env.example"
    env_file = Path(Paths.PROJECT_DIR) / ".env"
    if env_example.exists() and not env_file.exists():
        shutil.copy2(env_example, env_file)
        print("✓ Created .env from .env.example")
        print("⚠️  Please update .env with your actual values")

    print("\nDevelopment setup complete!")
    print("Run 'python setup_dev.py' to check configuration status.")


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "setup":
        setup_development()
    elif check_setup():
        print("\n🚀 System is ready to run!")
        print("Start the daemon with: python run.py, or run once with: python cli.py run")
    else:
        print("\n💡 NEXT STEPS:")
        print("1. Run 'python setup_dev.py setup' to create missing files")
        print("2. Update .env and lei.conf")
        print("3. Start the LLM backend or use --fixture-dir")
        sys.exit(1)
