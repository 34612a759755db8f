import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pytest

from app.schemas.corpus import Dataset, GoldAnnotation, Report, SuggestedTerm
from app.schemas.config import RunConfig

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# term -> mention variants used by the synthetic corpus
VOCABULARY = [
    ("Pyrexia", ["fever", "high temperature"]),
    ("Headache", ["headache", "head pain"]),
    ("Fatigue", ["fatigue", "tiredness", "exhaustion"]),
    ("Rash", ["rash", "blotchy rash"]),
    ("Nausea", ["nausea", "felt sick"]),
    ("Injection site erythema", ["redness at the injection site", "red arm"]),
    ("Chills", ["chills"]),
    ("Dizziness", ["dizzy", "lightheaded"]),
    ("Myalgia", ["muscle aches"]),
    ("Arthralgia", ["joint pain"]),
]


def make_report(report_id: str, terms: Sequence[str], text: Optional[str] = None) -> Report:
    return Report(
        id=report_id,
        text=text or f"Report {report_id} narrative.",
        suggested=[SuggestedTerm(term=t) for t in terms],
    )


def make_dataset(
    entries: Dict[str, Dict[str, List[str]]],
    extra_terms: Sequence[str] = ("Vomiting",),
    name: str = "fixture",
) -> Dataset:
    """Dataset from {report id: gold links}; every report also suggests the extra terms."""
    reports, gold = [], {}
    for report_id, links in entries.items():
        terms = list(links) + [t for t in extra_terms if t not in links]
        reports.append(make_report(report_id, terms))
        if links:
            gold[report_id] = GoldAnnotation(report_id=report_id, links=links)
    return Dataset(name=name, reports=reports, gold=gold)


def synthetic_dataset(n: int = 25, name: str = "synthetic") -> Dataset:
    """
    Deterministic annotated corpus. Report i links 1 + i % 4 terms and
    suggests two more that gold leaves unlinked.
    """
    reports, gold = [], {}
    size = len(VOCABULARY)
    for i in range(n):
        count = 1 + i % 4
        picked = [(i * 3 + j * 7) % size for j in range(count)]
        unlinked = [k for k in ((i + 1 + step) % size for step in range(size)) if k not in picked][:2]
        links = {}
        for j, index in enumerate(picked):
            term, variants = VOCABULARY[index]
            links[term] = [variants[(i + j) % len(variants)]]
        mentions = [m for values in links.values() for m in values]
        report = Report(
            id=f"R{i:03d}",
            text=f"Patient reported {', '.join(mentions)} after dose {i}.",
            suggested=[SuggestedTerm(term=VOCABULARY[k][0], code=f"1000{k}") for k in picked + unlinked],
        )
        reports.append(report)
        gold[report.id] = GoldAnnotation(report_id=report.id, links=links)
    return Dataset(name=name, reports=reports, gold=gold)


def released_file(name: str) -> Optional[Path]:
    base = Path(os.getenv("SYMPCODER_DIR", "data"))
    path = base / name
    return path if path.exists() else None


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
def synthetic():
    return synthetic_dataset()


@pytest.fixture
def run_config(tmp_path):
    def build(**overrides) -> RunConfig:
        values = {
            "dataset": str(tmp_path / "dataset.jsonl"),
            "cache_dir": str(tmp_path / "cache"),
            "output_dir": str(tmp_path / "results"),
            "concurrency": 3,
            "backend": {"kind": "oracle", "params": {"model": "oracle"}},
        }
        values.update(overrides)
        return RunConfig.model_validate(values)

    return build
