from pydantic import BaseModel, Field
from typing import Dict, List, Optional
from enum import Enum


class MatchMode(str, Enum):
    """Term linking modes of the LINK stage."""
    EM = "EM"
    FUZZY = "Fuzzy"
    EM_FUZZY = "EMFuzzy"


class PairKind(str, Enum):
    EXACT = "exact"
    FUZZY = "fuzzy"


class TermPair(BaseModel):
    predicted: str
    gold: str
    kind: PairKind
    similarity: float = Field(..., ge=0.0, le=1.0)


class TermAlignment(BaseModel):
    """One-to-one matching between predicted and gold terms."""
    pairs: List[TermPair] = Field(default_factory=list)
    unmatched_predicted: List[str] = Field(default_factory=list)
    unmatched_gold: List[str] = Field(default_factory=list)

    @property
    def predicted_count(self) -> int:
        return len(self.pairs) + len(self.unmatched_predicted)

    @property
    def gold_count(self) -> int:
        return len(self.pairs) + len(self.unmatched_gold)

    @property
    def total_similarity(self) -> float:
        return sum(pair.similarity for pair in self.pairs)


class ModeCounts(BaseModel):
    """Micro sums and the derived precision/recall for one mode."""
    matched: int = 0
    predicted: int = 0
    gold: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None


class LinkScores(BaseModel):
    """LINK stage precision and recall for EM, Fuzzy and EMFuzzy."""
    modes: Dict[MatchMode, ModeCounts]
    macro: bool = False

    def precision(self, mode: MatchMode) -> Optional[float]:
        return self.modes[mode].precision

    def recall(self, mode: MatchMode) -> Optional[float]:
        return self.modes[mode].recall


class MatchPair(BaseModel):
    """MATCH triple for one aligned mention pair."""
    predicted_term: str
    gold_term: str
    pred: str
    gold: str
    bleu: float
    fuzzy: float
    cosine: float


class MatchScores(BaseModel):
    """MATCH stage means over aligned mention pairs."""
    bleu: Optional[float] = None
    fuzzy: Optional[float] = None
    cosine: Optional[float] = None
    pair_count: int = 0
    unpaired_count: int = 0
    coverage: Optional[float] = None
    empty: bool = False
