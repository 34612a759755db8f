from pydantic import BaseModel, Field, field_validator
from typing import Optional
from enum import Enum

from app.schemas.backend import InferenceParams, NoiseProfile
from app.schemas.prompt import Strategy


class StrategyChoice(str, Enum):
    TACO = "taco"
    TASI = "tasi"
    BOTH = "both"


class BackendKind(str, Enum):
    OPENAI = "openai"
    MOCK = "mock"
    ORACLE = "oracle"


class EmbedderKind(str, Enum):
    OFFLINE = "offline"
    REMOTE = "remote"


class BackendConfig(BaseModel):
    """Where completions come from. The API key itself is only ever read from the environment."""
    kind: BackendKind = BackendKind.OPENAI
    base_url: str = "https://api.openai.com"
    api_key_env: str = "OPENAI_API_KEY"
    params: InferenceParams = Field(default_factory=lambda: InferenceParams(model="gpt-4o"))
    max_retries: int = Field(3, ge=1)
    backoff_seconds: float = Field(1.0, ge=0.0)
    requests_per_second: Optional[float] = Field(None, gt=0.0)
    retry_on_truncation: bool = False
    timeout_seconds: float = Field(60.0, gt=0.0)
    mock_response: str = "{}"

    @field_validator("base_url")
    @classmethod
    def strip_slash(cls, value: str) -> str:
        return value.rstrip("/")


class TemplatePaths(BaseModel):
    """Optional overrides of the shipped prompt templates."""
    taco: Optional[str] = None
    tasi_phase1: Optional[str] = None
    tasi_phase2: Optional[str] = None


class RunConfig(BaseModel):
    """Everything a pipeline run needs. Loaded from TOML, overridable by flags."""
    dataset: str
    strategy: StrategyChoice = StrategyChoice.TACO
    backend: BackendConfig = Field(default_factory=BackendConfig)
    embedder: EmbedderKind = EmbedderKind.OFFLINE
    embedding_model: str = "text-embedding-3-small"
    fuzzy_threshold: float = Field(0.8, gt=0.0, le=1.0)
    concurrency: int = Field(4, ge=1)
    cache_dir: str = ".cache/completions"
    output_dir: str = "results"
    results_name: Optional[str] = None
    macro: bool = False
    zero_fill_unpaired: bool = False
    oracle: NoiseProfile = Field(default_factory=NoiseProfile)
    templates: TemplatePaths = Field(default_factory=TemplatePaths)

    def strategies(self):
        if self.strategy == StrategyChoice.BOTH:
            return [Strategy.TACO, Strategy.TASI]
        return [Strategy(self.strategy.value)]
