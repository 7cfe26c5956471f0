"""
Run registry API: trained copies and their per-epoch history.
"""

import logging

from flask import Blueprint, Response, jsonify, request

from managers.run_manager import RunManager

logger = logging.getLogger(__name__)

runs_bp = Blueprint('runs', __name__)

# --------------------------------------------------------------------------
# API Routes - Training Runs
# --------------------------------------------------------------------------

@runs_bp.route('/api/runs')
def list_runs() -> Response:
    """רשימת ריצות, עם סינון אופציונלי לפי preemph ו-hidden_size."""
    preemph = request.args.get('preemph')
    hidden_size = request.args.get('hidden_size')
    try:
        hidden = int(hidden_size) if hidden_size else None
    except ValueError:
        return jsonify({"status": "error", "message": f"hidden_size must be an integer, got '{hidden_size}'"}), 400

    try:
        runs = RunManager().list_runs(preemph=preemph, hidden_size=hidden)
        return jsonify({"status": "success", "runs": [r.to_dict() for r in runs]})
    except Exception as e:
        logger.error(f"❌ Run list error: {e}")
        return jsonify({"status": "error", "message": str(e)}), 500


@runs_bp.route('/api/runs/<int:run_id>')
def get_run(run_id: int) -> Response:
    run = RunManager().get_run(run_id)
    if run is None:
        return jsonify({"status": "error", "message": f"run {run_id} not found"}), 404
    return jsonify({"status": "success", "run": run.to_dict()})


@runs_bp.route('/api/runs/<int:run_id>/epochs')
def get_run_epochs(run_id: int) -> Response:
    """היסטוריית האפוקים של ריצה (לגרף התכנסות)."""
    epochs = RunManager().get_epochs(run_id)
    if epochs is None:
        return jsonify({"status": "error", "message": f"run {run_id} not found"}), 404
    return jsonify({"status": "success", "run_id": run_id, "epochs": [e.to_dict() for e in epochs]})
