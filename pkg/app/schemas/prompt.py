from pydantic import BaseModel, Field
from typing import FrozenSet
from enum import Enum


class Strategy(str, Enum):
    """Prompting strategies."""
    TACO = "taco"
    TASI = "tasi"


class PromptKind(str, Enum):
    """Which prompt of a strategy was rendered. Recorded for cache keying."""
    TACO = "taco"
    TASI_PHASE1 = "tasi_phase1"
    TASI_PHASE2 = "tasi_phase2"


class PromptTemplate(BaseModel):
    """Four-part prompt template; the clinical text is injected through a placeholder."""
    header: str
    body: str
    output_instruction: str
    placeholders: FrozenSet[str] = Field(default_factory=lambda: frozenset({"clinical_text", "suggested_terms"}))

    def joined(self) -> str:
        return "\n\n".join(part.strip("\n") for part in (self.header, self.body, self.output_instruction))

    class Config:
        """Pydantic configuration."""
        frozen = True


class TasiTemplates(BaseModel):
    """Extraction template followed by the linking template."""
    phase1: PromptTemplate
    phase2: PromptTemplate

    class Config:
        """Pydantic configuration."""
        frozen = True


class Prompt(BaseModel):
    """A fully rendered prompt with provenance."""
    text: str = Field(..., min_length=1)
    strategy: PromptKind
    report_id: str

    class Config:
        """Pydantic configuration."""
        frozen = True
