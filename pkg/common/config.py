# common/config.py

from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

# Project root (this file lives in project_root/common/), so .env resolves from there.
PROJECT_ROOT = Path(__file__).parent.parent.resolve()


class Settings(BaseSettings):
    """
    Process-level settings loaded from environment variables and/or a .env file.

    Per-run pipeline parameters live in the TOML pipeline config
    (see pipeline/config.py); these settings only cover how the process runs.
    """
    # --- System Configuration ---
    # Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
    LOG_LEVEL: str = "INFO"

    # Default directory for run artifacts when neither the config nor --out names one.
    OUTPUT_DIR: Path = PROJECT_ROOT / "out"

    # Seed used when the pipeline config does not set one.
    DEFAULT_SEED: int = 0

    # Size of the per-frame worker pool. 1 runs frames inline.
    WORKERS: int = 1

    model_config = SettingsConfigDict(
        env_file=PROJECT_ROOT / ".env",
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore'
    )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Returns a cached instance of the settings.

    Created on first call, so tests can adjust the environment before loading.
    """
    return Settings()


settings = get_settings()
