"""
Configuration module for the grid MARL toolkit.
Process-level settings using pydantic-settings with environment variable support.
Per-experiment settings live in scenario files (see services/scenarios.py).
"""
from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables or a .env file."""

    # Paths
    logs_folder: str = "logs"
    runs_folder: str = "runs"
    scenarios_folder: str = str(Path(__file__).parent / "scenarios")

    # Logging
    log_level: str = "INFO"

    # Run defaults
    default_seed: int = 0

    class Config:
        env_file = ".env"
        case_sensitive = False


# Global settings instance
settings = Settings()
