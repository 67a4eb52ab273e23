import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from src.core.errors import PanelValidationError


@dataclass
class AppConfig:
    """Run configuration from the environment (and an optional .env file)"""
    threads: int = 1
    seed: int = 20221201
    n_boot: int = 1000
    log_level: str = "INFO"
    log_file: Optional[str] = None
    output_dir: str = "output"

    @classmethod
    def from_env(cls) -> "AppConfig":
        load_dotenv()
        config = cls(
            threads=cls._get_int("PANELDID_THREADS", cls.threads),
            seed=cls._get_int("PANELDID_SEED", cls.seed),
            n_boot=cls._get_int("PANELDID_NBOOT", cls.n_boot),
            log_level=os.getenv("PANELDID_LOG_LEVEL", cls.log_level).upper(),
            log_file=os.getenv("PANELDID_LOG_FILE") or None,
            output_dir=os.getenv("PANELDID_OUTPUT_DIR", cls.output_dir),
        )
        if config.threads < 1:
            raise PanelValidationError(f"PANELDID_THREADS must be >= 1, got {config.threads}")
        if config.n_boot < 1:
            raise PanelValidationError(f"PANELDID_NBOOT must be >= 1, got {config.n_boot}")
        return config

    @staticmethod
    def _get_int(key: str, default: int) -> int:
        """Integer environment variable or default"""
        value = os.getenv(key)
        if value is None or value.strip() == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise PanelValidationError(f"environment variable {key} must be an integer, got '{value}'")
