"""
Evaluation reports and pre-emphasis filter responses.
"""

import logging

from flask import Blueprint, Response, current_app, jsonify, request

from managers.audio_io import DEFAULT_SAMPLE_RATE
from managers.errors import ToolchainError
from managers.preemph_filters import DEFAULT_AW_TAPS, filter_for_label, response_table
from managers.run_manager import RunManager

logger = logging.getLogger(__name__)

reports_bp = Blueprint('reports', __name__)

MAX_RESPONSE_POINTS: int = 5000

# --------------------------------------------------------------------------
# I. דוחות (מטריצת הפסדים)
# --------------------------------------------------------------------------

@reports_bp.route('/api/reports')
def list_reports() -> Response:
    try:
        reports = RunManager().list_reports()
        return jsonify({"status": "success", "reports": [r.to_dict() for r in reports]})
    except Exception as e:
        logger.error(f"❌ Report list error: {e}")
        return jsonify({"status": "error", "message": str(e)}), 500


@reports_bp.route('/api/reports/<int:report_id>')
def get_report(report_id: int) -> Response:
    report = RunManager().get_report(report_id)
    if report is None:
        return jsonify({"status": "error", "message": f"report {report_id} not found"}), 404
    return jsonify({"status": "success", "report": report.to_dict(with_rows=True)})

# --------------------------------------------------------------------------
# II. תגובת תדר של מסנני pre-emphasis
# --------------------------------------------------------------------------

@reports_bp.route('/api/filters/<label>/response')
def filter_response(label: str) -> Response:
    """Magnitude response on a log grid; ?taps= applies to 'aw' only."""
    try:
        taps = int(request.args.get('taps', DEFAULT_AW_TAPS))
        points = int(request.args.get('points', 1000))
    except ValueError:
        return jsonify({"status": "error", "message": "taps and points must be integers"}), 400
    sample_rate = int(current_app.config.get('SAMPLE_RATE', DEFAULT_SAMPLE_RATE))
    if not 1 <= points <= MAX_RESPONSE_POINTS:
        return jsonify({"status": "error", "message": f"points must be in [1, {MAX_RESPONSE_POINTS}]"}), 400

    try:
        fir = filter_for_label(label, taps, sample_rate)
        grid = response_table(fir, sample_rate, points)
    except ToolchainError as e:
        return jsonify({"status": "error", "message": str(e)}), 400

    return jsonify({
        "status": "success",
        "label": fir.label,
        "num_taps": fir.num_taps,
        "sample_rate_hz": sample_rate,
        "freq_hz": grid.freqs_hz.tolist(),
        "gain_db": grid.gains_db.tolist(),
    })
