from pydantic import BaseModel, Field
from typing import Dict, List


class CodedOutput(BaseModel):
    """Distilled model prediction: normalized suggested term -> extracted mentions."""
    report_id: str
    links: Dict[str, List[str]] = Field(default_factory=dict)
    unlinkable_keys: List[str] = Field(default_factory=list)
    salvage_notes: List[str] = Field(default_factory=list)
    malformed: bool = False


class ExtractionList(BaseModel):
    """TASI phase-1 result: mentions in first-occurrence order."""
    report_id: str
    mentions: List[str] = Field(default_factory=list)
    salvage_notes: List[str] = Field(default_factory=list)
    malformed: bool = False
