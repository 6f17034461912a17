"""
Flask application for the LEI edge daemon.
Exposes resource statistics, tasks, the intelligence repository, reports and
a run trigger.
"""

import logging
from datetime import datetime, timezone

from flask import Flask, jsonify, request
from werkzeug.exceptions import BadRequest

from config import AppConfig, setup_logging
from edge_manager import EdgeManager
from errors import LeiError


# Initialize Flask app
app = Flask(__name__)
app.config.from_object(AppConfig)

setup_logging(AppConfig.LOGS_DIR)

logger = logging.getLogger(__name__)

# Initialize Edge Manager
try:
    edge_manager = EdgeManager()
    logger.info("Edge Manager initialized successfully")
except Exception as e:
    logger.error(f"Failed to initialize Edge Manager: {e}")
    edge_manager = None


def _unavailable():
    return (
        jsonify(
            {
                "success": False,
                "error": "Service unavailable",
                "message": "Edge manager is not available - check the pipeline configuration",
            }
        ),
        503,
    )


@app.before_request
def authenticate_api_request():
    """
    Middleware to authenticate API requests using X-API-KEY header.
    Only applies to routes starting with config.API_PREFIX.
    """
    if not request.path.startswith(AppConfig.API_PREFIX):
        return None

    if not AppConfig.API_KEY:
        logger.error("API_KEY environment variable not configured")
        return (
            jsonify(
                {
                    "success": False,
                    "error": "Authentication not configured",
                    "message": "Server configuration error - contact administrator",
                }
            ),
            500,
        )

    provided_key = request.headers.get("X-API-KEY")
    if not provided_key:
        logger.warning(f"Missing X-API-KEY header for {request.path} from {request.remote_addr}")
        return (
            jsonify(
                {
                    "success": False,
                    "error": "Authentication required",
                    "message": "X-API-KEY header is required for API endpoints",
                }
            ),
            403,
        )

    if provided_key != AppConfig.API_KEY:
        logger.warning(f"Invalid X-API-KEY header for {request.path} from {request.remote_addr}")
        return (
            jsonify({"success": False, "error": "Authentication failed", "message": "Invalid API key"}),
            403,
        )

    if edge_manager:
        edge_manager._clean_up()
    return None


@app.route("/health", methods=["GET"])
def health_check():
    """Health check endpoint."""
    data = {
        "status": "healthy" if edge_manager else "degraded",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": AppConfig.API_VERSION,
    }
    if edge_manager:
        data.update(edge_manager.status())
    return jsonify({"success": True, "message": "LEI edge daemon is running", "data": data}), 200


@app.route(f"{AppConfig.API_PREFIX}/resources", methods=["GET"])
def get_resources():
    """Latest windowed CPU and memory summary."""
    if not edge_manager:
        return _unavailable()
    try:
        return jsonify({"success": True, "data": edge_manager.resources(), "message": "Resource summary"}), 200
    except LeiError as e:
        logger.warning(f"No resource summary yet: {e}")
        return jsonify({"success": False, "error": str(e), "message": "No resource summary available yet"}), 404
    except Exception as e:
        logger.error(f"Unexpected error in get_resources: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Internal server error"}), 500


@app.route(f"{AppConfig.API_PREFIX}/tasks", methods=["GET"])
def get_tasks():
    """Every task known for the configured domain."""
    if not edge_manager:
        return _unavailable()
    try:
        tasks = edge_manager.tasks()
        return (
            jsonify({"success": True, "data": {"count": len(tasks), "tasks": tasks}, "message": f"Retrieved {len(tasks)} tasks"}),
            200,
        )
    except Exception as e:
        logger.error(f"Unexpected error in get_tasks: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Internal server error"}), 500


@app.route(f"{AppConfig.API_PREFIX}/repository", methods=["GET"])
def get_repository():
    """Validated scripts and integrity problems."""
    if not edge_manager:
        return _unavailable()
    try:
        data = edge_manager.repository()
        return jsonify({"success": True, "data": data, "message": f"{len(data['entries'])} validated scripts"}), 200
    except Exception as e:
        logger.error(f"Unexpected error in get_repository: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Internal server error"}), 500


@app.route(f"{AppConfig.API_PREFIX}/report", methods=["GET"])
def get_report():
    """
    Pipeline report computed from the logs.

    URL format: /api/v1/report or /api/v1/report?run_id=3
    """
    if not edge_manager:
        return _unavailable()
    try:
        run_id = request.args.get("run_id")
        if run_id is not None:
            try:
                run_id = int(run_id)
            except ValueError:
                raise BadRequest("'run_id' must be an integer")
        report = edge_manager.report(run_id)
        return jsonify({"success": True, "data": report, "message": f"Report over {len(report['runs'])} runs"}), 200

    except BadRequest as e:
        logger.warning(f"Bad request in get_report: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Bad request"}), 400
    except Exception as e:
        logger.error(f"Unexpected error in get_report: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Internal server error"}), 500


@app.route(f"{AppConfig.API_PREFIX}/runs/latest", methods=["GET"])
def get_latest_run():
    if not edge_manager:
        return _unavailable()
    try:
        manifest = edge_manager.latest_run()
        if manifest is None:
            return jsonify({"success": False, "error": "Not found", "message": "No runs recorded yet"}), 404
        return jsonify({"success": True, "data": manifest, "message": f"Run {manifest['run_id']}"}), 200
    except Exception as e:
        logger.error(f"Unexpected error in get_latest_run: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Internal server error"}), 500


@app.route(f"{AppConfig.API_PREFIX}/runs", methods=["POST"])
def start_run():
    """Start a full pipeline run in the background."""
    if not edge_manager:
        return _unavailable()
    try:
        if not edge_manager.trigger_run():
            return (
                jsonify({"success": False, "error": "Conflict", "message": "A pipeline run is already in progress"}),
                409,
            )
        logger.info("Pipeline run triggered over the API")
        return jsonify({"success": True, "message": "Pipeline run started"}), 202
    except Exception as e:
        logger.error(f"Unexpected error in start_run: {e}")
        return jsonify({"success": False, "error": str(e), "message": "Internal server error"}), 500


@app.errorhandler(BadRequest)
def handle_bad_request(error):
    """Handle BadRequest errors."""
    logger.warning(f"Bad request: {error}")
    return jsonify({"success": False, "error": "Bad request", "message": str(error)}), 400


@app.errorhandler(404)
def not_found(error):
    return jsonify({"success": False, "error": "Not found", "message": "Endpoint not found"}), 404


@app.errorhandler(405)
def method_not_allowed(error):
    return (
        jsonify(
            {
                "success": False,
                "error": "Method not allowed",
                "message": "HTTP method not allowed for this endpoint",
            }
        ),
        405,
    )


@app.errorhandler(500)
def internal_server_error(error):
    logger.error(f"Internal server error: {error}")
    return (
        jsonify({"success": False, "error": "Internal server error", "message": "An unexpected error occurred"}),
        500,
    )


if __name__ == "__main__":
    logger.info("Starting LEI edge daemon")
    if edge_manager:
        edge_manager.start_background()
    app.run(port=AppConfig.PORT, debug=AppConfig.DEBUG)
