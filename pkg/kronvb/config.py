"""
Configuration management for kronvb.
Loads environment variables and provides process-wide settings.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

from kronvb.core.exceptions import ConfigurationError

# Load environment variables from .env file
load_dotenv()


class Settings:
    """Library settings loaded from environment variables."""

    # Application
    ENV: str = os.getenv("KRONVB_ENV", "development")
    LOG_LEVEL: str = os.getenv("KRONVB_LOG_LEVEL", "INFO")
    LOG_TO_FILE: bool = os.getenv("KRONVB_LOG_TO_FILE", "true").lower() == "true"

    # Harness worker pool
    MAX_WORKERS: int = int(os.getenv("KRONVB_MAX_WORKERS", "4"))

    # Numerics
    DENSE_LIMIT: int = int(os.getenv("KRONVB_DENSE_LIMIT", "6000"))
    EIG_CLAMP: float = float(os.getenv("KRONVB_EIG_CLAMP", "1e-14"))

    @property
    def base_dir(self) -> Path:
        """Get project root directory."""
        return Path(__file__).parent.parent

    @property
    def log_dir(self) -> Path:
        """Get log directory path."""
        env_logs = os.getenv("KRONVB_LOG_DIR")
        if env_logs:
            return Path(env_logs)
        return self.base_dir / "logs"

    @property
    def output_dir(self) -> Path:
        """Get default output directory for CLI runs."""
        env_out = os.getenv("KRONVB_OUTPUT_DIR")
        if env_out:
            return Path(env_out)
        return self.base_dir / "outputs"

    def validate(self) -> bool:
        """Validate numeric settings."""
        problems = []
        if self.MAX_WORKERS < 1:
            problems.append(f"KRONVB_MAX_WORKERS={self.MAX_WORKERS}")
        if self.DENSE_LIMIT < 1:
            problems.append(f"KRONVB_DENSE_LIMIT={self.DENSE_LIMIT}")
        if not 0.0 < self.EIG_CLAMP < 1.0:
            problems.append(f"KRONVB_EIG_CLAMP={self.EIG_CLAMP}")

        if problems:
            raise ConfigurationError(f"Invalid settings: {', '.join(problems)}")

        return True


# Global settings instance
settings = Settings()
