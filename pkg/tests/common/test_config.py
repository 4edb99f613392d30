# tests/common/test_config.py

from pathlib import Path

from common import config


def test_settings_load_defaults(monkeypatch):
    """Tests that the Settings class loads with default values."""
    # Temporarily remove relevant env vars so the model defaults are tested
    for name in ("LOG_LEVEL", "OUTPUT_DIR", "DEFAULT_SEED", "WORKERS"):
        monkeypatch.delenv(name, raising=False)

    settings_instance = config.Settings(_env_file=None)

    assert settings_instance.LOG_LEVEL == "INFO"
    assert settings_instance.OUTPUT_DIR == config.PROJECT_ROOT / "out"
    assert settings_instance.DEFAULT_SEED == 0
    assert settings_instance.WORKERS == 1


def test_settings_load_from_env_file(tmp_path, monkeypatch):
    """Tests that settings are overridden by a .env file."""
    for name in ("LOG_LEVEL", "OUTPUT_DIR", "DEFAULT_SEED", "WORKERS"):
        monkeypatch.delenv(name, raising=False)

    env_file = tmp_path / ".env"
    env_file.write_text("LOG_LEVEL=DEBUG\nOUTPUT_DIR=./custom_out\nDEFAULT_SEED=42\nWORKERS=4\n")

    settings_instance = config.Settings(_env_file=env_file)

    assert settings_instance.LOG_LEVEL == "DEBUG"
    assert settings_instance.OUTPUT_DIR == Path("./custom_out")
    assert settings_instance.DEFAULT_SEED == 42
    assert settings_instance.WORKERS == 4


def test_environment_overrides_defaults(monkeypatch):
    """Tests that environment variables are read case-insensitively."""
    monkeypatch.setenv("workers", "3")

    settings_instance = config.Settings(_env_file=None)

    assert settings_instance.WORKERS == 3


def test_get_settings_is_cached():
    """Tests that get_settings returns the same instance on every call."""
    assert config.get_settings() is config.get_settings()
