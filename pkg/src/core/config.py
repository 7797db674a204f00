"""Environment-backed settings for aad-evalkit."""

import os
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


@dataclass(frozen=True)
class Settings:
    """Global settings shared by every subcommand.

    Values come from the environment (optionally a `.env` file) and can be
    overridden by the CLI's global flags.
    """

    data_dir: Path = Path(".")
    jobs: int = 1
    seed: int = 0
    window_sec: float = 10.0
    log_level: str = "INFO"
    log_file: Optional[Path] = None

    @classmethod
    def from_env(cls, dotenv: bool = True) -> "Settings":
        if dotenv:
            load_dotenv()

        try:
            jobs = int(os.getenv('AAD_EVALKIT_JOBS', str(os.cpu_count() or 1)))
            seed = int(os.getenv('AAD_EVALKIT_SEED', '0'))
            window_sec = float(os.getenv('AAD_EVALKIT_WINDOW_SEC', '10.0'))
        except ValueError as e:
            raise ConfigError(f"Invalid numeric environment setting: {e}") from e

        log_file = os.getenv('AAD_EVALKIT_LOG_FILE')
        settings = cls(
            data_dir=Path(os.getenv('AAD_EVALKIT_DATA_DIR', '.')),
            jobs=jobs,
            seed=seed,
            window_sec=window_sec,
            log_level=os.getenv('AAD_EVALKIT_LOG_LEVEL', 'INFO').upper(),
            log_file=Path(log_file) if log_file else None,
        )
        settings.validate()
        return settings

    def override(self, **values) -> "Settings":
        """Return a copy with every non-None value replaced."""
        updates = {key: value for key, value in values.items() if value is not None}
        if 'data_dir' in updates:
            updates['data_dir'] = Path(updates['data_dir'])
        if 'log_level' in updates:
            updates['log_level'] = str(updates['log_level']).upper()
        settings = replace(self, **updates)
        settings.validate()
        return settings

    def validate(self):
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        if self.window_sec <= 0:
            raise ConfigError(f"window_sec must be positive, got {self.window_sec}")
        if not isinstance(logging.getLevelName(self.log_level), int):
            raise ConfigError(f"Unknown log level: {self.log_level}")


def setup_logging(settings: Settings):
    """Configure root logging: stderr always, plus a log file when configured."""
    handlers = [logging.StreamHandler()]
    if settings.log_file:
        settings.log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(settings.log_file))

    logging.basicConfig(
        level=settings.log_level,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
