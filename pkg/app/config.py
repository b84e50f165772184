"""Process settings using pydantic-settings."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables."""

    # App metadata
    APP_NAME: str = "DrainSim"
    LOG_LEVEL: str = "INFO"

    # Run defaults (a scenario file or CLI flag overrides these)
    OUTPUT_DIR: str = "results"
    DEFAULT_PROFILE: str = "desk"
    DEFAULT_SEED: int = 1

    # Sweep members run in this many worker processes
    SWEEP_JOBS: int = 1

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True
    )


# Global settings instance
settings = Settings()
