from pydantic import BaseModel, ConfigDict, Field
from typing import Dict, List, Optional
from enum import Enum

from app.schemas.metrics import MatchMode, MatchPair, TermAlignment
from app.schemas.prompt import Strategy


class PhaseOneTrace(BaseModel):
    """Audit trail of the TASI extraction step."""
    raw_ref: str
    raw: str
    mentions: List[str] = Field(default_factory=list)
    salvage_notes: List[str] = Field(default_factory=list)
    malformed: bool = False


class EvaluationRecord(BaseModel):
    """One line of a results file: prediction, alignments and MATCH triples for a report."""
    model_config = ConfigDict(populate_by_name=True, protected_namespaces=())

    report_id: str = Field(..., alias="id")
    model: str
    strategy: Strategy
    raw_ref: str
    raw: str = ""
    truncated: bool = False
    phase1: Optional[PhaseOneTrace] = None
    links: Dict[str, List[str]] = Field(default_factory=dict)
    unlinkable_keys: List[str] = Field(default_factory=list)
    salvage_notes: List[str] = Field(default_factory=list)
    malformed: bool = False
    alignments: Dict[MatchMode, TermAlignment] = Field(default_factory=dict)
    match_pairs: List[MatchPair] = Field(default_factory=list)
    unpaired_mentions: int = 0

    def key(self):
        return (self.report_id, self.model, self.strategy.value)

    def to_line(self) -> str:
        return self.model_dump_json(by_alias=True)


class ScoreRow(BaseModel):
    """One row of the LINK/MATCH tables for a (model, strategy[, subset]) group."""
    model_config = ConfigDict(protected_namespaces=())

    model: str
    strategy: Strategy
    subset: Optional[str] = None
    record_count: int = 0
    empty: bool = False
    em_precision: Optional[float] = None
    em_recall: Optional[float] = None
    fuzzy_precision: Optional[float] = None
    fuzzy_recall: Optional[float] = None
    em_fuzzy_precision: Optional[float] = None
    em_fuzzy_recall: Optional[float] = None
    bleu: Optional[float] = None
    fuzzy: Optional[float] = None
    similarity: Optional[float] = None


class SymptomBreakdown(BaseModel):
    """Per-term variant table with EMFuzzy precision/recall and mean similarity."""
    term: str
    dataset: str
    report_count: int
    precision: Optional[float] = None
    recall: Optional[float] = None
    mean_cosine: Optional[float] = None
    gold_variants: Dict[str, int] = Field(default_factory=dict)
    model_variants: Dict[str, int] = Field(default_factory=dict)


class LinkStatus(str, Enum):
    CORRECT = "correct"
    MISSING = "missing"
    SPURIOUS = "spurious"


class ExhibitEntry(BaseModel):
    """One term of one model's prediction, marked against gold."""
    term: str
    status: LinkStatus
    gold_mentions: List[str] = Field(default_factory=list)
    model_mentions: List[str] = Field(default_factory=list)
    mention_divergence: bool = False


class ModelExhibit(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str
    strategy: Strategy
    entries: List[ExhibitEntry] = Field(default_factory=list)


class Exhibit(BaseModel):
    """Side-by-side comparison of every model's links for one report."""
    report_id: str
    text: str
    gold: Dict[str, List[str]] = Field(default_factory=dict)
    models: List[ModelExhibit] = Field(default_factory=list)
