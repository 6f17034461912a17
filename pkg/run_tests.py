#!/usr/bin/env python3
"""
Smoke test suite for a running LEI edge daemon.
Checks authentication, the read endpoints and (optionally) a full pipeline
run triggered over the API. Unit tests live under tests/ and run with pytest.

Usage:
    python run_tests.py                    # Auth + read endpoints against --url
    python run_tests.py --local            # Same, against http://127.0.0.1:5000
    python run_tests.py --trigger-run      # Also start a run and wait for it
    python run_tests.py --quick            # Offline checks only (no server)
"""

import argparse
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import dotenv
import requests

# Add the current directory to Python path
sys.path.insert(0, os.path.dirname(__file__))

from config import get_env_variable

dotenv.load_dotenv()

FIXTURE_RESPONSES = Path(__file__).parent / "fixtures" / "air_quality" / "responses"


class SmokeTestSuite:
    """HTTP smoke checks for the LEI edge daemon."""

    def __init__(self, base_url="http://127.0.0.1:5000"):
        self.base_url = base_url.rstrip("/")
        self.api_key = get_env_variable("API_KEY", "test-api-key")
        self.prefix = f"/api/{get_env_variable('API_VERSION', 'v1')}"
        self.auth_headers = {"X-API-KEY": self.api_key}
        self.test_results = {
            "offline": {"passed": 0, "failed": 0},
            "auth": {"passed": 0, "failed": 0},
            "api": {"passed": 0, "failed": 0},
            "run": {"passed": 0, "failed": 0},
        }

    def _check(self, category: str, ok: bool, label: str, detail: str = ""):
        if ok:
            print(f"✅ {label}")
            self.test_results[category]["passed"] += 1
        else:
            print(f"❌ {label}{f' ({detail})' if detail else ''}")
            self.test_results[category]["failed"] += 1

    def _get(self, path, headers=None, **params):
        return requests.get(f"{self.base_url}{path}", headers=headers, params=params or None, timeout=10)

    def run_all_tests(self, trigger_run=False):
        print("🚀 STARTING LEI SMOKE TEST SUITE")
        print("=" * 80)
        print()

        self.test_authentication_middleware()
        print()

        self.test_api_endpoints()
        print()

        if trigger_run:
            self.test_pipeline_run()
            print()

        self.print_test_summary()

    def run_quick_tests(self):
        """Offline checks: response parsing and a fixture pipeline run in a temp folder."""
        print("🚀 RUNNING QUICK OFFLINE CHECKS")
        print("=" * 60)
        print()

        self.test_response_parsing()
        print()
        self.test_fixture_pipeline()
        print()

        self.print_test_summary()

    def test_response_parsing(self):
        print("🧩 TESTING LLM RESPONSE PARSING")
        print("=" * 60)
        from llm_parser import extract_json

        for name in ("task_gen.txt", "code_gen_0.txt", "code_gen_1.txt"):
            path = FIXTURE_RESPONSES / name
            try:
                payload = extract_json(path.read_text(encoding="utf-8"))
                self._check("offline", isinstance(payload, list) and bool(payload), f"{name} yields a JSON array")
            except Exception as e:
                self._check("offline", False, f"{name} parses", str(e))

    def test_fixture_pipeline(self):
        """Copy the shipped domain into a temp folder and run all four steps in fixture mode."""
        print("🧪 TESTING FIXTURE PIPELINE RUN")
        print("=" * 60)
        from config import load_config
        from pipeline import run_pipeline

        project = Path(__file__).parent
        with tempfile.TemporaryDirectory(prefix="lei_smoke_") as tmp:
            root = Path(tmp)
            for folder in ("data/air_quality", "prompts", "fixtures/air_quality"):
                shutil.copytree(project / folder, root / folder)
            (root / "lei.conf").write_text(
                "data_type=air_quality\nllm_mode=fixture\nllm_fixture_dir=fixtures/air_quality\n",
                encoding="utf-8",
            )
            try:
                result = run_pipeline(load_config(root / "lei.conf", env={}))
                counts = result.report["counts"] if result.report else {}
                self._check("offline", result.exit_code == 0, "Fixture run completes", result.manifest.failure or "")
                self._check(
                    "offline",
                    counts.get("executed_ok") == counts.get("tasks_proposed") == 3,
                    "All three fixture tasks executed",
                    str(counts),
                )
            except Exception as e:
                self._check("offline", False, "Fixture run completes", str(e))

    def test_authentication_middleware(self):
        print("🔐 TESTING AUTHENTICATION MIDDLEWARE")
        print("=" * 60)

        try:
            response = self._get("/health")
            self._check("auth", response.status_code == 200, "Health endpoint accessible without authentication")
        except Exception as e:
            self._check("auth", False, "Health endpoint reachable", str(e))
            return

        for path in ("/tasks", "/report"):
            endpoint = f"{self.prefix}{path}"
            try:
                missing = self._get(endpoint)
                self._check("auth", missing.status_code == 403, f"GET {endpoint} requires a key", str(missing.status_code))
                invalid = self._get(endpoint, headers={"X-API-KEY": "invalid-key-123"})
                self._check("auth", invalid.status_code == 403, f"GET {endpoint} rejects an invalid key", str(invalid.status_code))
            except Exception as e:
                self._check("auth", False, f"GET {endpoint}", str(e))

    def test_api_endpoints(self):
        print("🌐 TESTING API ENDPOINTS")
        print("=" * 60)

        health = self._get("/health").json()
        self._check("api", health.get("success") is True, f"Health: {health.get('data', {}).get('status')}")

        # 404 is a valid answer before the first run / first sample
        expectations = {
            "/resources": {200, 404},
            "/tasks": {200},
            "/repository": {200},
            "/report": {200},
            "/runs/latest": {200, 404},
        }
        for path, allowed in expectations.items():
            endpoint = f"{self.prefix}{path}"
            try:
                response = self._get(endpoint, headers=self.auth_headers)
                body = response.json()
                self._check(
                    "api",
                    response.status_code in allowed and "success" in body,
                    f"GET {endpoint} -> {response.status_code}",
                    body.get("message", ""),
                )
            except Exception as e:
                self._check("api", False, f"GET {endpoint}", str(e))

        response = self._get(f"{self.prefix}/report", headers=self.auth_headers, run_id="latest")
        self._check("api", response.status_code == 400, "Non-integer run_id rejected", str(response.status_code))

    def test_pipeline_run(self, timeout_s=1800):
        print("⚙️  TESTING PIPELINE RUN OVER THE API")
        print("=" * 60)

        endpoint = f"{self.prefix}/runs"
        response = requests.post(f"{self.base_url}{endpoint}", headers=self.auth_headers, timeout=10)
        self._check("run", response.status_code in (202, 409), f"POST {endpoint} -> {response.status_code}")
        if response.status_code != 202:
            return

        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            status = self._get("/health").json().get("data", {})
            if not status.get("run_in_progress"):
                break
            time.sleep(5)
        else:
            self._check("run", False, "Run finished in time", f"{timeout_s}s")
            return

        latest = self._get(f"{self.prefix}/runs/latest", headers=self.auth_headers).json().get("data") or {}
        self._check("run", latest.get("failure") is None, f"Run {latest.get('run_id')} steps: {latest.get('steps')}", latest.get("failure") or "")

        report = self._get(f"{self.prefix}/report", headers=self.auth_headers, run_id=latest.get("run_id")).json()
        counts = (report.get("data") or {}).get("counts", {})
        print(f"   📊 Funnel: {counts}")
        self._check("run", report.get("success") is True, "Report available for the run")

    def print_test_summary(self):
        print("📊 SMOKE TEST SUMMARY")
        print("=" * 80)

        total_passed = sum(result["passed"] for result in self.test_results.values())
        total_failed = sum(result["failed"] for result in self.test_results.values())
        total_tests = total_passed + total_failed

        print(f"   ✅ Passed: {total_passed}")
        print(f"   ❌ Failed: {total_failed}")
        if total_tests > 0:
            print(f"   🎯 Success Rate: {total_passed / total_tests * 100:.1f}%")

        for category, results in self.test_results.items():
            total = results["passed"] + results["failed"]
            if total > 0:
                print(f"   {category.title()}: {results['passed']}/{total}")

        print("\n" + "=" * 80)
        if total_failed == 0:
            print("🎉 ALL CHECKS PASSED!")
        else:
            print(f"⚠️  {total_failed} CHECKS FAILED - CHECK LOGS ABOVE")
        print("=" * 80)
        return total_failed


def main():
    parser = argparse.ArgumentParser(
        description="LEI edge daemon smoke tests",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_tests.py --local                 # Auth + endpoints on the local daemon
  python run_tests.py --local --trigger-run   # Also run the pipeline once
  python run_tests.py --quick                 # Offline checks only
        """,
    )
    parser.add_argument("--local", action="store_true", help="Test the local daemon (http://127.0.0.1:5000)")
    parser.add_argument("--url", type=str, default="http://127.0.0.1:5000", help="Base URL of the daemon")
    parser.add_argument("--trigger-run", action="store_true", help="Start a pipeline run and wait for it")
    parser.add_argument("--quick", action="store_true", help="Offline checks without a server")
    args = parser.parse_args()

    suite = SmokeTestSuite(base_url="http://127.0.0.1:5000" if args.local else args.url)
    if args.quick:
        suite.run_quick_tests()
    else:
        suite.run_all_tests(trigger_run=args.trigger_run)
    sys.exit(1 if sum(r["failed"] for r in suite.test_results.values()) else 0)


if __name__ == "__main__":
    main()
