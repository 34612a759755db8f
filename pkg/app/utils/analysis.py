import json
import logging
import os
from collections import Counter, OrderedDict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib
import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.errors import (
    DataIOError,
    DatasetParseError,
    EmptyGoldError,
    NotFoundError,
    RangeError,
    UnknownTermError,
)
from app.schemas.corpus import Dataset
from app.schemas.metrics import MatchMode
from app.schemas.records import (
    EvaluationRecord,
    Exhibit,
    ExhibitEntry,
    LinkStatus,
    ModelExhibit,
    ScoreRow,
    SymptomBreakdown,
)
from app.schemas.prompt import Strategy
from app.utils.metrics import align_mentions, fuzzy_ratio, link_scores, match_scores
from app.utils.normalize import normalize_term

logger = logging.getLogger(__name__)

TABLE_TEXT = "table-text"
JSON = "json"
CSV = "csv"
FORMATS = (TABLE_TEXT, JSON, CSV)

IDENTITY_COLUMNS = [("Prompt Type", "strategy"), ("Models", "model")]
LINK_COLUMNS = [
    ("EM-Precision", "em_precision"),
    ("EM-Recall", "em_recall"),
    ("Fuzzy-Precision", "fuzzy_precision"),
    ("Fuzzy-Recall", "fuzzy_recall"),
    ("EM-Fuzzy-Precision", "em_fuzzy_precision"),
    ("EM-Fuzzy-Recall", "em_fuzzy_recall"),
]
MATCH_COLUMNS = [("BLEU", "bleu"), ("Fuzzy", "fuzzy"), ("Similarity", "similarity")]
COLUMN_SETS = {"link": LINK_COLUMNS, "match": MATCH_COLUMNS, "all": LINK_COLUMNS + MATCH_COLUMNS}

NEAR_MISS_THRESHOLD = 0.6


def _groups(records: Iterable[EvaluationRecord]) -> "OrderedDict[Tuple[str, Strategy], List[EvaluationRecord]]":
    grouped: "OrderedDict[Tuple[str, Strategy], List[EvaluationRecord]]" = OrderedDict()
    for record in records:
        grouped.setdefault((record.model, record.strategy), []).append(record)
    return grouped


def score_row(
    records: Sequence[EvaluationRecord],
    model: str,
    strategy: Strategy,
    subset: Optional[str] = None,
    macro: bool = False,
    zero_fill_unpaired: bool = False,
) -> ScoreRow:
    """
    LINK and MATCH scores of one (model, strategy) group.

    A group without records is returned flagged empty with null scores.
    """
    if not records:
        return ScoreRow(model=model, strategy=strategy, subset=subset, empty=True)
    link = link_scores([record.alignments for record in records], macro=macro)
    match = match_scores(records, zero_fill_unpaired=zero_fill_unpaired)
    return ScoreRow(
        model=model,
        strategy=strategy,
        subset=subset,
        record_count=len(records),
        em_precision=link.precision(MatchMode.EM),
        em_recall=link.recall(MatchMode.EM),
        fuzzy_precision=link.precision(MatchMode.FUZZY),
        fuzzy_recall=link.recall(MatchMode.FUZZY),
        em_fuzzy_precision=link.precision(MatchMode.EM_FUZZY),
        em_fuzzy_recall=link.recall(MatchMode.EM_FUZZY),
        bleu=match.bleu,
        fuzzy=match.fuzzy,
        similarity=match.cosine,
    )


def score_rows(
    records: Sequence[EvaluationRecord], macro: bool = False, zero_fill_unpaired: bool = False
) -> List[ScoreRow]:
    """One score row per (model, strategy) present in the records, in first-seen order."""
    return [
        score_row(group, model, strategy, macro=macro, zero_fill_unpaired=zero_fill_unpaired)
        for (model, strategy), group in _groups(records).items()
    ]


def subset_compare(
    records: Sequence[EvaluationRecord],
    subsets: Sequence[Dataset],
    macro: bool = False,
    zero_fill_unpaired: bool = False,
) -> List[ScoreRow]:
    """
    Recompute scores restricted to each subset's reports.

    Args:
        records: Evaluation records over the full dataset
        subsets: Subset datasets, typically common-k and rare-k
        macro: Macro-average LINK scores
        zero_fill_unpaired: Count unpaired mentions as zero MATCH scores

    Returns:
        List[ScoreRow]: One row per (subset, model, strategy); a subset no
        record covers yields rows flagged empty
    """
    groups = _groups(records)
    rows = []
    for subset in subsets:
        ids = {report.id for report in subset.reports}
        for (model, strategy), group in groups.items():
            covered = [record for record in group if record.report_id in ids]
            if not covered:
                logger.warning("No %s/%s records cover subset %s", model, strategy.value, subset.name)
            rows.append(score_row(covered, model, strategy, subset.name, macro, zero_fill_unpaired))
    return rows


def _variants(mentions: Iterable[str]) -> Dict[str, int]:
    """Count mentions grouped by normalize_term, labelled by their most frequent raw form."""
    grouped: "OrderedDict[str, Counter]" = OrderedDict()
    for mention in mentions:
        grouped.setdefault(normalize_term(mention), Counter())[mention] += 1
    tallies = []
    for forms in grouped.values():
        # most_common keeps first-seen order among equal counts
        display = forms.most_common(1)[0][0]
        tallies.append((display, sum(forms.values())))
    return dict(sorted(tallies, key=lambda item: -item[1]))


def _near_misses(term: str, universe: Iterable[str], limit: int = 3) -> List[str]:
    scored = sorted(((fuzzy_ratio(term, other), other) for other in universe), key=lambda item: (-item[0], item[1]))
    return [other for score, other in scored[:limit] if score >= NEAR_MISS_THRESHOLD]


def symptom_breakdown(
    records: Sequence[EvaluationRecord],
    dataset: Dataset,
    terms: Sequence[str],
) -> List[SymptomBreakdown]:
    """
    Per-term variant tables of gold and model mentions.

    Precision and recall use the EMFuzzy alignments of the records: a pair
    whose gold side is the term is a hit, a pair or unmatched prediction on
    the term's predicted side is a prediction for it.

    Args:
        records: Evaluation records to scan for model mentions
        dataset: Dataset whose gold annotations supply gold mentions
        terms: Terms to break down

    Returns:
        List[SymptomBreakdown]: One entry per requested term

    Raises:
        EmptyGoldError: If the dataset has no gold annotations
        UnknownTermError: If a term is linked by no gold annotation
    """
    if not dataset.gold:
        raise EmptyGoldError(f"dataset {dataset.name} has no gold annotations")

    known = OrderedDict()
    for annotation in dataset.gold.values():
        for term in annotation.links:
            known.setdefault(normalize_term(term), term)

    breakdowns = []
    for requested in terms:
        key = normalize_term(requested)
        if key not in known:
            raise UnknownTermError(requested, [known[k] for k in _near_misses(key, known)])

        gold_mentions: List[str] = []
        report_count = 0
        for annotation in dataset.gold.values():
            hits = [m for t, mentions in annotation.links.items() if normalize_term(t) == key for m in mentions]
            if hits:
                report_count += 1
                gold_mentions.extend(hits)

        model_mentions: List[str] = []
        tp = predicted = gold_total = 0
        cosines: List[float] = []
        for record in records:
            model_mentions.extend(m for t, mentions in record.links.items() if normalize_term(t) == key for m in mentions)
            alignment = record.alignments.get(MatchMode.EM_FUZZY)
            if alignment is None:
                continue
            for pair in alignment.pairs:
                on_gold = normalize_term(pair.gold) == key
                on_pred = normalize_term(pair.predicted) == key
                tp += int(on_gold)
                gold_total += int(on_gold)
                predicted += int(on_gold or on_pred)
            predicted += sum(1 for t in alignment.unmatched_predicted if normalize_term(t) == key)
            gold_total += sum(1 for t in alignment.unmatched_gold if normalize_term(t) == key)
            cosines.extend(p.cosine for p in record.match_pairs if normalize_term(p.gold_term) == key)

        breakdowns.append(SymptomBreakdown(
            term=known[key],
            dataset=dataset.name,
            report_count=report_count,
            precision=tp / predicted if predicted else None,
            recall=tp / gold_total if gold_total else None,
            mean_cosine=float(np.mean(cosines)) if cosines else None,
            gold_variants=_variants(gold_mentions),
            model_variants=_variants(model_mentions),
        ))
    return breakdowns


def _divergent(predicted: Sequence[str], gold: Sequence[str]) -> bool:
    pairs = align_mentions(predicted, gold)
    if len(pairs) != len(predicted) or len(pairs) != len(gold):
        return True
    return any(fuzzy_ratio(p, g) < 1.0 for p, g in pairs)


def exhibit(report_id: str, records: Sequence[EvaluationRecord], dataset: Dataset) -> Exhibit:
    """
    Gold links and each model's links for one report, with per-term marks.

    Every gold term appears once per model as correct or missing; predicted
    terms with no gold counterpart are marked spurious.

    Raises:
        NotFoundError: If the report is unknown or no record covers it
    """
    report = dataset.report(report_id)
    if report is None:
        raise NotFoundError(f"report {report_id} is not in dataset {dataset.name}")
    covering = [record for record in records if record.report_id == report_id]
    if not covering:
        raise NotFoundError(f"no evaluation records for report {report_id}")

    annotation = dataset.gold.get(report_id)
    gold_links = dict(annotation.links) if annotation else {}
    models = []
    for record in covering:
        alignment = record.alignments[MatchMode.EM_FUZZY]
        partner = {pair.gold: pair.predicted for pair in alignment.pairs}
        entries = []
        for term, mentions in gold_links.items():
            if term in partner:
                predicted = record.links.get(partner[term], [])
                entries.append(ExhibitEntry(
                    term=term,
                    status=LinkStatus.CORRECT,
                    gold_mentions=mentions,
                    model_mentions=predicted,
                    mention_divergence=_divergent(predicted, mentions),
                ))
            else:
                entries.append(ExhibitEntry(term=term, status=LinkStatus.MISSING, gold_mentions=mentions))
        for term in alignment.unmatched_predicted:
            entries.append(ExhibitEntry(
                term=term, status=LinkStatus.SPURIOUS, model_mentions=record.links.get(term, [])
            ))
        models.append(ModelExhibit(model=record.model, strategy=record.strategy, entries=entries))
    return Exhibit(report_id=report_id, text=report.text, gold=gold_links, models=models)


def render_exhibit(document: Exhibit) -> str:
    marks = {LinkStatus.CORRECT: "[ok]", LinkStatus.MISSING: "[missing]", LinkStatus.SPURIOUS: "[spurious]"}
    lines = [f"Report {document.report_id}", document.text, "", "Gold:"]
    lines.extend(f"  {term}: {mentions}" for term, mentions in document.gold.items())
    for model in document.models:
        lines.append("")
        lines.append(f"{model.model} ({model.strategy.value}):")
        for entry in model.entries:
            mentions = entry.model_mentions if entry.model_mentions else "[none]"
            flag = "  ~ mention differs" if entry.mention_divergence else ""
            lines.append(f"  {marks[entry.status]:<10} {entry.term}: {mentions}{flag}")
    return "\n".join(lines)


def _columns(rows: Sequence[ScoreRow], columns: str) -> List[Tuple[str, str]]:
    if columns not in COLUMN_SETS:
        raise RangeError(f"columns must be one of {', '.join(COLUMN_SETS)}, got '{columns}'")
    identity = list(IDENTITY_COLUMNS)
    if any(row.subset for row in rows):
        identity.append(("Subset", "subset"))
    return identity + COLUMN_SETS[columns]


def _cell(row: ScoreRow, attr: str):
    value = getattr(row, attr)
    return value.value if isinstance(value, Strategy) else value


def render_table(rows: Sequence[ScoreRow], columns: str = "all") -> str:
    """Fixed-width text table, three decimals, '-' for undefined scores."""
    layout = _columns(rows, columns)
    widths = [max(len(header), 12) for header, _ in layout]
    lines = ["  ".join(header.ljust(w) for (header, _), w in zip(layout, widths))]
    for row in rows:
        cells = []
        for (_, attr), width in zip(layout, widths):
            value = _cell(row, attr)
            if value is None:
                text = "-"
            elif isinstance(value, float):
                text = f"{value:.3f}"
            else:
                text = str(value)
            cells.append(text.ljust(width))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def export_report(rows: Sequence[ScoreRow], fmt: str, path: Optional[str] = None, columns: str = "all") -> str:
    """
    Serialize score rows as a text table, JSON or CSV.

    Args:
        rows: Score rows, possibly empty
        fmt: table-text, json or csv
        path: File to write; nothing is written when omitted
        columns: link, match or all

    Returns:
        str: The serialized report

    Raises:
        RangeError: If fmt or columns is unknown
        DataIOError: If the file cannot be written
    """
    if fmt == TABLE_TEXT:
        content = render_table(rows, columns) + "\n"
    elif fmt == JSON:
        content = json.dumps([row.model_dump(mode="json") for row in rows], ensure_ascii=False, indent=2) + "\n"
    elif fmt == CSV:
        layout = _columns(rows, columns)
        frame = pd.DataFrame(
            [[_cell(row, attr) for _, attr in layout] for row in rows],
            columns=[header for header, _ in layout],
        )
        content = frame.to_csv(index=False, na_rep="", lineterminator="\n")
    else:
        raise RangeError(f"format must be one of {', '.join(FORMATS)}, got '{fmt}'")

    if path is not None:
        try:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(content)
        except OSError as e:
            raise DataIOError(f"could not write {path}: {str(e)}")
    return content


def load_scores(path: str) -> List[ScoreRow]:
    """
    Read score rows back from a JSON export.

    Raises:
        DataIOError: If the file cannot be read
        DatasetParseError: If the content is not a list of score rows
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise DataIOError(f"could not read {path}: {str(e)}")
    except ValueError as e:
        raise DatasetParseError(f"invalid JSON: {str(e)}", line=getattr(e, "lineno", 1))
    if not isinstance(payload, list):
        raise DatasetParseError("expected a list of score rows", line=1)
    try:
        return [ScoreRow.model_validate(item) for item in payload]
    except ValidationError as e:
        raise DatasetParseError(f"invalid score row: {e.errors()[0]['msg']}", line=1)


def _grouped_bars(frame: pd.DataFrame, metrics: List[Tuple[str, str]], title: str, path: str) -> None:
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = list(frame["label"])
    x = np.arange(len(labels))
    width = 0.8 / max(1, len(metrics))
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(labels)), 4))
    for i, (header, _) in enumerate(metrics):
        values = frame[header].astype(float).fillna(0.0)
        ax.bar(x + i * width - 0.4 + width / 2, values, width, label=header)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _histogram_bars(histogram: Dict[int, int], path: str) -> None:
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(list(histogram), list(histogram.values()), width=0.8)
    ax.set_xlabel("Symptoms per report")
    ax.set_ylabel("Reports")
    ax.set_title("Symptom count distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_charts(
    rows: Sequence[ScoreRow],
    output_dir: str,
    prefix: str = "scores",
    histogram: Optional[Dict[int, int]] = None,
) -> List[str]:
    """
    Write chart data series as CSV and grouped bar charts as PNG.

    With a histogram (gold link count -> reports) the symptom count
    distribution is written too, as <prefix>_symptom_counts.csv and .png.

    Returns:
        List[str]: Paths written
    """
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"could not create {output_dir}: {str(e)}")

    labels = [
        f"{row.subset + ' ' if row.subset else ''}{row.model} {row.strategy.value}" for row in rows
    ]
    written = []
    for name, metrics in (("link", LINK_COLUMNS), ("match", MATCH_COLUMNS)):
        frame = pd.DataFrame(
            {header: [getattr(row, attr) for row in rows] for header, attr in metrics}
        )
        frame.insert(0, "label", labels)
        data_path = os.path.join(output_dir, f"{prefix}_{name}.csv")
        chart_path = os.path.join(output_dir, f"{prefix}_{name}.png")
        try:
            frame.to_csv(data_path, index=False, na_rep="", lineterminator="\n")
            written.append(data_path)
            if rows:
                _grouped_bars(frame, metrics, f"{name.upper()} scores", chart_path)
                written.append(chart_path)
        except OSError as e:
            raise DataIOError(f"could not write charts to {output_dir}: {str(e)}")

    if histogram:
        frame = pd.DataFrame({"symptoms": list(histogram), "reports": list(histogram.values())})
        data_path = os.path.join(output_dir, f"{prefix}_symptom_counts.csv")
        chart_path = os.path.join(output_dir, f"{prefix}_symptom_counts.png")
        try:
            frame.to_csv(data_path, index=False, lineterminator="\n")
            _histogram_bars(histogram, chart_path)
        except OSError as e:
            raise DataIOError(f"could not write charts to {output_dir}: {str(e)}")
        written.extend([data_path, chart_path])
    return written
