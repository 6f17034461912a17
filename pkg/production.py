#!/usr/bin/env python3
"""
Production runner for the LEI edge daemon.
Serves the Flask app with Waitress and keeps the resource sampler and the
source poller running in the background.
"""

import argparse
import os
import signal
import sys
from pathlib import Path

# Add the project directory to the Python path
project_dir = Path(__file__).parent
sys.path.insert(0, str(project_dir))


def setup_environment():
    from dotenv import load_dotenv

    load_dotenv(project_dir / ".env")
    print("✅ Environment variables loaded")


def validate_configuration() -> bool:
    """Check the API key and that the pipeline config loads."""
    from config import AppConfig, Paths, load_config
    from errors import LeiError

    print("🔧 Validating configuration...")
    ok = True
    if not AppConfig.API_KEY:
        print("⚠️  API_KEY not set - API endpoints will refuse requests")
        ok = False
    else:
        print("✅ API_KEY configured")

    try:
        cfg = load_config(Paths.DEFAULT_CONFIG_FILE)
        print(f"✅ Pipeline config: data_type={cfg.data_type}, model={cfg.backend.model_id}, mode={cfg.backend.mode}")
    except LeiError as e:
        print(f"❌ Pipeline config invalid: {e}")
        ok = False

    print(f"📊 Debug={AppConfig.DEBUG}, Log Level={AppConfig.LOG_LEVEL}, Memory limit={AppConfig.MEMORY_LIMIT_MB} MB")
    return ok


def setup_signal_handlers(edge_manager=None):
    """Stop background threads before exiting."""

    def signal_handler(signum, frame):
        print(f"\n🛑 Received signal {signum}, shutting down...")
        if edge_manager:
            edge_manager.stop_background()
        sys.exit(0)

    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)


def run_waitress_server(host="0.0.0.0", port=5000, threads=4, **kwargs):
    try:
        from waitress import serve
        from app import app, edge_manager

        print("LEI Edge Daemon - Production Server")
        print("=" * 60)
        print(f"🌐 Server URL: http://{host}:{port}")
        print(f"🧵 Threads: {threads}")
        print("=" * 60)

        setup_signal_handlers(edge_manager)
        if edge_manager:
            edge_manager.start_background()

        waitress_config = {
            "host": host,
            "port": port,
            "threads": threads,
            "connection_limit": 100,
            "cleanup_interval": 30,
            "channel_timeout": 120,
            "ident": "LEI-Edge/1.0",
            **kwargs,
        }
        serve(app, **waitress_config)

    except KeyboardInterrupt:
        print("\n🛑 Server stopped by user")
    except Exception as e:
        print(f"❌ Error starting server: {e}")
        sys.exit(1)


def main():
    parser = argparse.ArgumentParser(
        description="LEI Edge Daemon Production Server",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python production.py                    # Default server
  python production.py --mode light       # Single thread, small connection limit
  python production.py --mode docker      # Port from $PORT
  python production.py --host 127.0.0.1 --port 8000 --threads 2
        """,
    )
    parser.add_argument("--mode", choices=["basic", "light", "docker"], default="basic", help="Server configuration mode")
    parser.add_argument("--host", default="0.0.0.0", help="Host to bind to (default: 0.0.0.0)")
    parser.add_argument("--port", type=int, default=5000, help="Port to bind to (default: 5000)")
    parser.add_argument("--threads", type=int, default=4, help="Number of threads (default: 4)")
    parser.add_argument("--skip-checks", action="store_true", help="Skip configuration validation")
    args = parser.parse_args()

    setup_environment()
    if not args.skip_checks and not validate_configuration():
        print("⚠️  Configuration issues found. Use --skip-checks to ignore.")
        sys.exit(1)

    from config import AppConfig

    os.makedirs(AppConfig.LOGS_DIR, exist_ok=True)

    if args.mode == "light":
        # Raspberry Pi class devices
        run_waitress_server(host=args.host, port=args.port, threads=1, connection_limit=20, channel_timeout=60)
    elif args.mode == "docker":
        run_waitress_server(host="0.0.0.0", port=int(os.getenv("PORT", 5000)), threads=args.threads)
    else:
        run_waitress_server(host=args.host, port=args.port, threads=args.threads)


if __name__ == "__main__":
    main()
