"""
Run/report portal: Flask application factory.
Serves the run registry and evaluation reports as JSON.
"""

import logging
from pathlib import Path
from typing import Type

from flask import Flask
from sqlalchemy import event
from sqlalchemy.engine import Engine

from config import Config
from managers.models import db_sql

# Blueprints
from routes.report_routes import reports_bp
from routes.run_routes import runs_bp

logger = logging.getLogger(__name__)

# --------------------------------------------------------------------------
# 1. אופטימיזציה ל-SQLite
# --------------------------------------------------------------------------

@event.listens_for(Engine, "connect")
def set_sqlite_pragma(dbapi_connection, connection_record):
    """WAL mode so the portal can read while a training run writes."""
    if type(dbapi_connection).__module__.split('.')[0] not in ('sqlite3', 'pysqlite2'):
        return
    cursor = dbapi_connection.cursor()
    try:
        cursor.execute("PRAGMA journal_mode=WAL")
        cursor.execute("PRAGMA synchronous=NORMAL")
    except Exception as e:
        logger.warning(f"⚠️ Could not set SQLite PRAGMAs: {e}")
    finally:
        cursor.close()

# --------------------------------------------------------------------------
# 2. Application factory
# --------------------------------------------------------------------------

def create_app(config_class: Type[Config] = Config) -> Flask:
    """Builds the app, creates the registry tables and registers the blueprints."""
    logging.basicConfig(level=getattr(logging, config_class.LOG_LEVEL, logging.INFO))
    logging.getLogger('werkzeug').setLevel(logging.ERROR)

    app = Flask(__name__)
    app.config.from_object(config_class)

    db_uri = app.config.get('SQLALCHEMY_DATABASE_URI', '')
    if db_uri.startswith('sqlite:///') and db_uri != 'sqlite:///:memory:':
        Path(db_uri.replace('sqlite:///', '')).parent.mkdir(parents=True, exist_ok=True)

    db_sql.init_app(app)
    with app.app_context():
        db_sql.create_all()
        try:
            config_class.validate_config()
            logger.info("✅ Run registry ready.")
        except ValueError as e:
            logger.error(f"❌ Initialization Warning: {e}")

    app.register_blueprint(runs_bp)
    app.register_blueprint(reports_bp)
    return app


if __name__ == '__main__':
    portal = create_app()
    portal.run(debug=Config.DEBUG, host='0.0.0.0', port=Config.PORTAL_PORT, use_reloader=False)
