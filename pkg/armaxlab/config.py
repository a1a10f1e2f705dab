"""
Configuration management for armaxlab.
Uses Pydantic settings for environment variable validation.
"""

from typing import Optional

from pydantic_settings import BaseSettings

from armaxlab import __version__


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Service Configuration
    service_name: str = "armaxlab"
    service_version: str = __version__
    service_host: str = "0.0.0.0"
    service_port: int = 8010
    debug: bool = False
    environment: str = "development"

    # Logging Configuration
    log_level: str = "INFO"
    log_format: str = "json"

    # Experiment runner
    max_workers: int = 1
    output_dir: Optional[str] = None
    report_schema_version: str = "1.0"
    curve_points: int = 60

    # Identification
    p0: float = 1e3
    vi_tolerance: float = 1e-10
    eps_min: float = 1e-12
    rcond_threshold: float = 1e-10
    gamma_guard: float = 1e-12

    # Riccati solvers
    are_tolerance: float = 1e-10
    are_max_iter: int = 100_000
    dare_tolerance: float = 1e-10
    dare_max_iter: int = 100_000
    stability_tolerance: float = 1e-9

    model_config = {
        "env_prefix": "ARMAXLAB_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "extra": "ignore"
    }


# Global settings instance
settings = Settings()
