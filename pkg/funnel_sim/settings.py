# settings.py
from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-wide settings, read from FUNNEL_SIM_* environment variables or a .env file.
    Usage:
        settings = get_settings()
        settings.threads        # scenario-level parallelism cap (FUNNEL_SIM_THREADS)
    """
    model_config = SettingsConfigDict(env_prefix="FUNNEL_SIM_", env_file=".env", extra="ignore")

    threads: int = Field(default=1, ge=1, description="Max scenarios run concurrently")
    log_level: str = Field(default="INFO")
    output_dir: Path = Field(default=Path("out"))


@lru_cache
def get_settings() -> Settings:
    return Settings()
