import os
from pathlib import Path
from dotenv import load_dotenv

# טעינת משתני סביבה
load_dotenv(override=True)


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    """
    Toolchain configuration.
    Handles data paths, the run-registry database and portal settings.
    Training hyperparameters live in TrainingConfig / DeviceConfig.
    """

    # --- Paths Management ---
    BASE_DIR: Path = Path(__file__).resolve().parent

    # אם קיים DATA_PATH (נפוץ ב-Docker) נשתמש בו, אחרת תיקיית data מקומית
    DATA_DIR: Path = Path(os.getenv('DATA_PATH', BASE_DIR / 'data'))
    DATA_DIR.mkdir(parents=True, exist_ok=True)

    # --- Audio ---
    try:
        SAMPLE_RATE: int = int(os.getenv('TOOLCHAIN_SAMPLE_RATE', 44100))
    except (ValueError, TypeError):
        SAMPLE_RATE = 44100

    # --- Logging & Run Registry ---
    LOG_LEVEL: str = os.getenv('TOOLCHAIN_LOG_LEVEL', 'INFO').upper()
    RECORD_RUNS: bool = _env_bool('TOOLCHAIN_RECORD_RUNS', 'true')

    # --- Flask Settings (report portal) ---
    SECRET_KEY: str = os.getenv('FLASK_SECRET_KEY', 'change-me-in-production-12345')
    DEBUG: bool = _env_bool('FLASK_DEBUG', 'false')
    try:
        PORTAL_PORT: int = int(os.getenv('PORTAL_PORT', 5100))
    except (ValueError, TypeError):
        PORTAL_PORT = 5100

    # --- Database Configuration ---
    _runs_db: str = str(DATA_DIR / 'runs.db')
    SQLALCHEMY_DATABASE_URI: str = os.getenv('SQLALCHEMY_DATABASE_URI', f'sqlite:///{_runs_db}')
    SQLALCHEMY_TRACK_MODIFICATIONS: bool = False

    @classmethod
    def validate_config(cls) -> None:
        """
        Pre-flight check of the environment-driven settings.
        Raises ValueError naming every invalid field.
        """
        problems = []
        if cls.SAMPLE_RATE <= 0:
            problems.append(f'TOOLCHAIN_SAMPLE_RATE={cls.SAMPLE_RATE}')
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f'TOOLCHAIN_LOG_LEVEL={cls.LOG_LEVEL}')
        if not (0 < cls.PORTAL_PORT < 65536):
            problems.append(f'PORTAL_PORT={cls.PORTAL_PORT}')
        if problems:
            raise ValueError(f"❌ Invalid environment settings: {', '.join(problems)}")


class TestingConfig(Config):
    """In-memory registry for the test-suite and throwaway portals."""
    TESTING: bool = True
    SQLALCHEMY_DATABASE_URI: str = 'sqlite:///:memory:'
    RECORD_RUNS: bool = False
