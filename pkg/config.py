from typing import Optional
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

class Settings(BaseSettings):
    """
    Process-wide settings for the Serial LoRA toolkit.
    Values come from the environment (or a local .env file); run parameters
    live in TrainConfig and the CLI flags instead.
    """
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        populate_by_name=True,
    )

    # --- Runtime ---
    THREADS: int = Field(default=1, alias="SLORA_THREADS")
    LOG_LEVEL: str = Field(default="INFO", alias="SLORA_LOG_LEVEL")
    # Off by default: history.csv then carries seconds=0.0 and reruns stay byte-identical
    RECORD_WALL_TIME: bool = Field(default=False, alias="SLORA_RECORD_WALL_TIME")

    # --- SVD (one-sided Jacobi) ---
    SVD_MAX_SWEEPS: int = 60
    SVD_TOL: float = 1e-12

    # --- Gradient check ---
    GRADCHECK_FULL_LIMIT: int = 2000
    GRADCHECK_SAMPLE: int = 200

    # --- Adapter ---
    # None keeps dW = BA unscaled; a value enables the alpha/r scaling of classic LoRA
    LORA_ALPHA: Optional[float] = Field(default=None, alias="SLORA_LORA_ALPHA")

    # --- Adam ---
    ADAM_BETA1: float = 0.9
    ADAM_BETA2: float = 0.999
    ADAM_EPS: float = 1e-8

    # --- Validators ---
    @field_validator("THREADS", mode="before")
    @classmethod
    def parse_threads(cls, v: str | int) -> int:
        if isinstance(v, str):
            v = v.strip() or "1"
        try:
            threads = int(v)
        except ValueError:
            raise ValueError("SLORA_THREADS must be an integer.")
        return max(threads, 1)

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def parse_log_level(cls, v: str) -> str:
        return str(v).strip().upper() or "INFO"

# Settings are loaded once; import CONFIG everywhere else
CONFIG = Settings()
