from pydantic import BaseModel, Field, field_validator
from typing import List


class InferenceParams(BaseModel):
    """Sampling parameters sent with every completion request."""
    model: str = Field(..., min_length=1)
    max_new_tokens: int = Field(256, ge=1)
    temperature: float = Field(0.4, ge=0.0, le=2.0)

    class Config:
        """Pydantic configuration."""
        frozen = True


class RawCompletion(BaseModel):
    """Model response text before distillation."""
    text: str
    model: str
    prompt_fingerprint: str
    retrieved_from_cache: bool = False
    truncated: bool = False


class EmbeddingVector(BaseModel):
    """A dense embedding tagged with the embedder that produced it."""
    values: List[float]
    source: str

    @field_validator("values")
    @classmethod
    def not_empty(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("embedding has no components")
        return value


class NoiseProfile(BaseModel):
    """Controlled corruption applied by the oracle backend."""
    drop_terms: int = Field(0, ge=0)
    add_spurious: int = Field(0, ge=0)
    perturb_mentions: float = Field(0.0, ge=0.0, le=1.0)
    seed: int = 0

    def signature(self) -> str:
        return f"drop={self.drop_terms},spurious={self.add_spurious},perturb={self.perturb_mentions},seed={self.seed}"

    class Config:
        """Pydantic configuration."""
        frozen = True
