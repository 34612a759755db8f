import math
from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Optional

from app.utils.normalize import normalize_term


class SuggestedTerm(BaseModel):
    """A standard vocabulary term offered for one report."""
    term: str
    code: Optional[str] = None

    @field_validator("term")
    @classmethod
    def term_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("suggested term is empty")
        return value

    class Config:
        """Pydantic configuration."""
        frozen = True


class Report(BaseModel):
    """One adverse-event narrative with its suggested term list."""
    id: str
    text: str
    suggested: List[SuggestedTerm]

    @field_validator("id", "text")
    @classmethod
    def not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("must not be empty")
        return value

    @field_validator("suggested")
    @classmethod
    def unique_terms(cls, value: List[SuggestedTerm]) -> List[SuggestedTerm]:
        if not value:
            raise ValueError("suggested list is empty")
        seen = set()
        for item in value:
            key = normalize_term(item.term)
            if key in seen:
                raise ValueError(f"duplicate suggested term '{item.term}'")
            seen.add(key)
        return value

    def suggested_terms(self) -> List[str]:
        return [item.term for item in self.suggested]

    def suggested_index(self) -> Dict[str, str]:
        """Map normalized term to its original spelling."""
        return {normalize_term(item.term): item.term for item in self.suggested}

    class Config:
        """Pydantic configuration."""
        frozen = True


class GoldAnnotation(BaseModel):
    """Human verified mapping from standard term to original mentions."""
    report_id: str
    links: Dict[str, List[str]] = Field(default_factory=dict)

    @field_validator("links", mode="before")
    @classmethod
    def join_token_lists(cls, value):
        # Mentions may arrive as token lists; store them as space-joined strings
        if not isinstance(value, dict):
            return value
        joined = {}
        for term, mentions in value.items():
            if isinstance(mentions, list):
                mentions = [" ".join(m) if isinstance(m, list) else m for m in mentions]
            joined[term] = mentions
        return joined

    @field_validator("links")
    @classmethod
    def mentions_present(cls, value: Dict[str, List[str]]) -> Dict[str, List[str]]:
        for term, mentions in value.items():
            if not mentions:
                raise ValueError(f"gold term '{term}' has no mentions")
            if any(not m.strip() for m in mentions):
                raise ValueError(f"gold term '{term}' has an empty mention")
        return value

    def terms(self) -> List[str]:
        return list(self.links)

    class Config:
        """Pydantic configuration."""
        frozen = True


class Dataset(BaseModel):
    """A named collection of reports with optional gold annotations."""
    name: str
    reports: List[Report]
    gold: Dict[str, GoldAnnotation] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_references(self) -> "Dataset":
        ids = set()
        for report in self.reports:
            if report.id in ids:
                raise ValueError(f"duplicate report id '{report.id}'")
            ids.add(report.id)
        by_id = {r.id: r for r in self.reports}
        for report_id, annotation in self.gold.items():
            report = by_id.get(report_id)
            if report is None:
                raise ValueError(f"gold references unknown report '{report_id}'")
            check_gold_terms(report, annotation)
        return self

    def report(self, report_id: str) -> Optional[Report]:
        for report in self.reports:
            if report.id == report_id:
                return report
        return None

    def __len__(self) -> int:
        return len(self.reports)

    class Config:
        """Pydantic configuration."""
        frozen = True


def check_gold_terms(report: Report, annotation: GoldAnnotation) -> None:
    """
    Ensure every gold term appears in the report's suggested list.

    Raises:
        ValueError: If a gold term is not suggested for the report
    """
    suggested = report.suggested_index()
    for term in annotation.links:
        if normalize_term(term) not in suggested:
            raise ValueError(f"gold term '{term}' is not in the suggested list of report '{report.id}'")


class ColumnStats(BaseModel):
    """Average, median, min and max for one statistics column."""
    average: float
    median: int
    min: int
    max: int

    @property
    def average_display(self) -> int:
        # half rounds up, not to even
        return int(math.floor(self.average + 0.5))


class DatasetStats(BaseModel):
    """Basic statistics of a dataset."""
    name: str
    report_count: int
    clinical_text: ColumnStats
    suggested_symptoms: ColumnStats
    extracted_symptoms: Optional[ColumnStats] = None
    # gold-linked term count -> number of reports; None without gold
    symptom_histogram: Optional[Dict[int, int]] = None
