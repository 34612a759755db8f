import json
import logging
import os
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.errors import (
    DataIOError,
    DatasetParseError,
    DatasetValidationError,
    DuplicateIdError,
    EmptyGoldError,
    EmptyInputError,
    RangeError,
    SchemaError,
)
from app.schemas.corpus import (
    ColumnStats,
    Dataset,
    DatasetStats,
    GoldAnnotation,
    Report,
    SuggestedTerm,
    check_gold_terms,
)
from app.schemas.records import EvaluationRecord
from app.utils.normalize import normalize_term

logger = logging.getLogger(__name__)

# Raw VAERS distribution columns
VAERS_ID = "VAERS_ID"
SYMPTOM_TEXT = "SYMPTOM_TEXT"
SYMPTOM_COLUMNS = [f"SYMPTOM{i}" for i in range(1, 6)]

TOP = "top"
BOTTOM = "bottom"


def _read_table(path: str, required: Sequence[str], encoding: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding=encoding)
    except FileNotFoundError:
        raise DataIOError(f"file not found: {path}")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise DataIOError(f"could not read {path}: {str(e)}")
    for column in required:
        if column not in frame.columns:
            raise SchemaError(f"{os.path.basename(path)} is missing required column {column}")
    return frame


def ingest_vaers(data_table: str, symptoms_table: str, encoding: str = "utf-8", name: str = "vaers") -> Dataset:
    """
    Build an unannotated dataset from the raw VAERS data and symptoms CSV files.

    Args:
        data_table: Path to the VAERSDATA file (VAERS_ID, SYMPTOM_TEXT)
        symptoms_table: Path to the VAERSSYMPTOMS file (VAERS_ID, SYMPTOM1..SYMPTOM5)
        encoding: Text encoding of both files
        name: Dataset label

    Returns:
        Dataset: Reports carrying the narrative and the union of coded symptoms; gold is empty

    Raises:
        SchemaError: If a required column is missing
        DuplicateIdError: If a VAERS_ID repeats in the data table
    """
    data = _read_table(data_table, [VAERS_ID, SYMPTOM_TEXT], encoding)
    symptoms = _read_table(symptoms_table, [VAERS_ID] + SYMPTOM_COLUMNS, encoding)

    duplicated = data[VAERS_ID].str.strip().duplicated()
    if duplicated.any():
        first = data[VAERS_ID][duplicated].iloc[0].strip()
        raise DuplicateIdError(f"duplicate VAERS_ID {first} in {os.path.basename(data_table)}")

    # Several symptom rows may exist per report; keep first-seen spelling of each term
    suggested: Dict[str, Dict[str, str]] = {}
    for row in symptoms[[VAERS_ID] + SYMPTOM_COLUMNS].itertuples(index=False, name=None):
        report_id = row[0].strip()
        terms = suggested.setdefault(report_id, {})
        for cell in row[1:]:
            term = cell.strip()
            if term and normalize_term(term) not in terms:
                terms[normalize_term(term)] = term

    reports = []
    for report_id, text in data[[VAERS_ID, SYMPTOM_TEXT]].itertuples(index=False, name=None):
        report_id = report_id.strip()
        terms = list(suggested.get(report_id, {}).values())
        if not text.strip():
            logger.warning("Skipping VAERS_ID %s: empty SYMPTOM_TEXT", report_id)
            continue
        if not terms:
            logger.warning("Skipping VAERS_ID %s: no coded symptoms", report_id)
            continue
        reports.append(Report(id=report_id, text=text, suggested=[SuggestedTerm(term=t) for t in terms]))

    logger.info("Ingested %d reports from %s", len(reports), data_table)
    return Dataset(name=name, reports=reports)


def load_dataset(path: str, name: Optional[str] = None) -> Dataset:
    """
    Load and validate a line-delimited dataset file.

    Args:
        path: Path to the dataset file
        name: Optional dataset label (defaults to the file stem)

    Returns:
        Dataset: The validated dataset

    Raises:
        DataIOError: If the file cannot be read
        DatasetParseError: If a line is not a JSON object
        DatasetValidationError: If a record violates a type invariant
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise DataIOError(f"could not read dataset {path}: {str(e)}")

    reports: List[Report] = []
    gold: Dict[str, GoldAnnotation] = {}
    seen = set()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetParseError(f"malformed record: {e.msg}", line=number)
        if not isinstance(record, dict):
            raise DatasetParseError("record is not an object", line=number)

        report_id = record.get("id")
        try:
            report = Report(id=report_id, text=record.get("text"), suggested=record.get("suggested"))
        except ValidationError as e:
            raise DatasetValidationError(_first_error(e), report_id=report_id, line=number)
        if report.id in seen:
            raise DatasetValidationError("duplicate report id", report_id=report.id, line=number)
        seen.add(report.id)
        reports.append(report)

        if record.get("gold") is not None:
            try:
                annotation = GoldAnnotation(report_id=report.id, links=record["gold"])
                check_gold_terms(report, annotation)
            except (ValidationError, ValueError) as e:
                detail = _first_error(e) if isinstance(e, ValidationError) else str(e)
                raise DatasetValidationError(detail, report_id=report.id, line=number)
            gold[report.id] = annotation

    return Dataset(name=name or Path(path).stem, reports=reports, gold=gold)


def _first_error(error: ValidationError) -> str:
    first = error.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return f"{where}: {first['msg']}" if where else first["msg"]


def save_dataset(dataset: Dataset, path: str) -> None:
    """
    Write a dataset in the canonical line-delimited form read by load_dataset.

    Args:
        dataset: The dataset to write
        path: Destination file
    """
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for report in dataset.reports:
                record = {
                    "id": report.id,
                    "text": report.text,
                    "suggested": [{"term": s.term, "code": s.code} for s in report.suggested],
                }
                if report.id in dataset.gold:
                    record["gold"] = dataset.gold[report.id].links
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
    except OSError as e:
        raise DataIOError(f"could not write dataset {path}: {str(e)}")


def word_count(text: str) -> int:
    return len(text.split())


def gold_link_count(dataset: Dataset, report_id: str) -> int:
    annotation = dataset.gold.get(report_id)
    return len(annotation.links) if annotation else 0


def column_stats(values: Iterable[int]) -> ColumnStats:
    """Average, lower-middle median, min and max of a non-empty sample."""
    ordered = np.sort(np.asarray(list(values), dtype=np.int64))
    return ColumnStats(
        average=float(ordered.mean()),
        median=int(ordered[(len(ordered) - 1) // 2]),
        min=int(ordered[0]),
        max=int(ordered[-1]),
    )


def compute_stats(
    dataset: Dataset,
    results: Optional[Sequence[EvaluationRecord]] = None,
    model: Optional[str] = None,
    strategy: Optional[str] = None,
) -> DatasetStats:
    """
    Length statistics of a dataset.

    Args:
        dataset: The dataset to characterize
        results: Optional evaluation records; adds the extracted-symptom column
        model: Keep only records of this model
        strategy: Keep only records of this prompting strategy

    Returns:
        DatasetStats: Per-column average, median, min and max, plus the
        symptom-count histogram when the dataset is annotated

    Raises:
        EmptyInputError: If the dataset has no reports
        RangeError: If the selected records still mix several (model, strategy) runs
    """
    if not dataset.reports:
        raise EmptyInputError(f"dataset {dataset.name} has no reports")

    extracted = None
    if results is not None:
        ids = {r.id for r in dataset.reports}
        chosen = [
            record for record in results
            if record.report_id in ids
            and (model is None or record.model == model)
            and (strategy is None or record.strategy == strategy)
        ]
        runs = sorted({(record.model, record.strategy.value) for record in chosen})
        if len(runs) > 1:
            listed = ", ".join(f"{m}/{s}" for m, s in runs)
            raise RangeError(f"results mix several runs ({listed}); choose a model and strategy")
        if chosen:
            extracted = column_stats(len(record.links) for record in chosen)

    return DatasetStats(
        name=dataset.name,
        report_count=len(dataset.reports),
        clinical_text=column_stats(word_count(r.text) for r in dataset.reports),
        suggested_symptoms=column_stats(gold_link_count(dataset, r.id) for r in dataset.reports),
        extracted_symptoms=extracted,
        symptom_histogram=symptom_count_histogram(dataset) if dataset.gold else None,
    )


def symptom_frequencies(dataset: Dataset) -> List[Tuple[str, int]]:
    """
    Rank gold terms by the number of reports linking them.

    Returns:
        List[Tuple[str, int]]: (term, report count), descending count, ties by normalized term

    Raises:
        EmptyGoldError: If the dataset has no gold annotations
    """
    if not dataset.gold:
        raise EmptyGoldError(f"dataset {dataset.name} has no gold annotations")

    counts: Counter = Counter()
    spelling: Dict[str, str] = {}
    for report in dataset.reports:
        annotation = dataset.gold.get(report.id)
        if annotation is None:
            continue
        for key, term in {normalize_term(t): t for t in annotation.links}.items():
            spelling.setdefault(key, term)
            counts[key] += 1

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [(spelling[key], count) for key, count in ranked]


def build_subset(dataset: Dataset, selector: str, k: int) -> Dataset:
    """
    Keep the reports whose gold links hit the k most (top) or least (bottom) frequent terms.

    Args:
        dataset: Annotated dataset
        selector: "top" or "bottom"
        k: Number of terms to select

    Returns:
        Dataset: Named common-<k> or rare-<k>; gold carried over unmodified

    Raises:
        RangeError: If k is not within 1..number of distinct gold terms
    """
    if selector not in (TOP, BOTTOM):
        raise RangeError(f"selector must be '{TOP}' or '{BOTTOM}', got '{selector}'")
    ranked = symptom_frequencies(dataset)
    if k < 1 or k > len(ranked):
        raise RangeError(f"k={k} outside 1..{len(ranked)} distinct gold terms")

    chosen = ranked[:k] if selector == TOP else ranked[-k:]
    selected = {normalize_term(term) for term, _ in chosen}

    reports = []
    for report in dataset.reports:
        annotation = dataset.gold.get(report.id)
        if annotation and any(normalize_term(t) in selected for t in annotation.links):
            reports.append(report)
    gold = {r.id: dataset.gold[r.id] for r in reports}
    label = "common" if selector == TOP else "rare"
    return Dataset(name=f"{label}-{k}", reports=reports, gold=gold)


def symptom_count_histogram(dataset: Dataset) -> Dict[int, int]:
    """
    Number of reports per gold-linked term count.

    Raises:
        EmptyInputError: If the dataset has no reports
        EmptyGoldError: If the dataset has no gold annotations
    """
    if not dataset.reports:
        raise EmptyInputError(f"dataset {dataset.name} has no reports")
    if not dataset.gold:
        raise EmptyGoldError(f"dataset {dataset.name} has no gold annotations")
    buckets = Counter(gold_link_count(dataset, r.id) for r in dataset.reports)
    return dict(sorted(buckets.items()))


def stats_to_dict(stats: DatasetStats) -> dict:
    return stats.model_dump()


def render_stats(stats: Sequence[DatasetStats]) -> str:
    """
    Render one or more DatasetStats as a text table, one block per dataset.

    Annotated datasets get a closing "Symptoms/Report" line of
    <gold link count>:<reports> buckets.
    """
    columns = ["Clinical Text", "Suggested Symptoms", "Extracted Symptoms"]
    rows = [("Average Length", "average_display"), ("Median Length", "median"),
            ("Min Length", "min"), ("Max Length", "max")]
    lines = [f"{'':<16}" + "".join(f"{c:>20}" for c in columns)]
    for item in stats:
        lines.append(f"{item.name} (# of Reports: {item.report_count})")
        for label, attr in rows:
            cells = []
            for column in (item.clinical_text, item.suggested_symptoms, item.extracted_symptoms):
                cells.append("-" if column is None else str(getattr(column, attr)))
            lines.append(f"{label:<16}" + "".join(f"{c:>20}" for c in cells))
        if item.symptom_histogram:
            buckets = "  ".join(f"{count}:{reports}" for count, reports in item.symptom_histogram.items())
            lines.append(f"{'Symptoms/Report':<16}{buckets}")
    return "\n".join(lines)
