import json

import pytest

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
from app.schemas.corpus import Dataset
from app.schemas.records import EvaluationRecord
from app.utils.corpus import (
    build_subset,
    compute_stats,
    ingest_vaers,
    load_dataset,
    render_stats,
    save_dataset,
    symptom_count_histogram,
    symptom_frequencies,
)
from app.utils.normalize import normalize_term
from conftest import FIXTURES, make_dataset, released_file

SMALL = str(FIXTURES / "small.jsonl")


def write_lines(path, records):
    path.write_text("\n".join(r if isinstance(r, str) else json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return str(path)


def test_load_small_fixture():
    dataset = load_dataset(SMALL)
    assert dataset.name == "small"
    assert [r.id for r in dataset.reports] == ["S1", "S2", "S3", "S4"]
    assert dataset.gold["S4"].links["Fatigue"] == ["fatigue", "tiredness"]
    assert dataset.reports[0].suggested[0].code == "10037660"


def test_small_fixture_hand_counted_stats():
    stats = compute_stats(load_dataset(SMALL))
    assert stats.report_count == 4
    # words 9, 2, 15, 11
    assert stats.clinical_text.average == 9.25
    assert stats.clinical_text.average_display == 9
    assert (stats.clinical_text.median, stats.clinical_text.min, stats.clinical_text.max) == (9, 2, 15)
    # links 2, 1, 3, 4
    assert stats.suggested_symptoms.average == 2.5
    assert stats.suggested_symptoms.average_display == 3
    assert (stats.suggested_symptoms.median, stats.suggested_symptoms.min, stats.suggested_symptoms.max) == (2, 1, 4)
    assert stats.extracted_symptoms is None


def test_singleton_stats():
    dataset = make_dataset({"A": {"Pyrexia": ["fever"], "Rash": ["rash"]}})
    report = dataset.reports[0].model_copy(update={"text": "one two three four five"})
    stats = compute_stats(Dataset(name="one", reports=[report], gold=dataset.gold))
    for column, value in ((stats.clinical_text, 5), (stats.suggested_symptoms, 2)):
        assert (column.average, column.median, column.min, column.max) == (value, value, value, value)


def test_median_takes_lower_middle():
    terms = ["Pyrexia", "Rash", "Headache", "Chills", "Nausea"]
    dataset = make_dataset({
        "A": {t: [t.lower()] for t in terms[:3]},
        "B": {t: [t.lower()] for t in terms},
    })
    links = compute_stats(dataset).suggested_symptoms
    assert (links.average, links.median, links.min, links.max) == (4, 3, 3, 5)


def test_stats_carry_histogram():
    dataset = load_dataset(SMALL)
    stats = compute_stats(dataset)
    assert stats.symptom_histogram == symptom_count_histogram(dataset)
    assert "Symptoms/Report 1:1  2:1  3:1  4:1" in render_stats([stats])

    raw = ingest_vaers(str(FIXTURES / "vaers_data.csv"), str(FIXTURES / "vaers_symptoms.csv"))
    assert compute_stats(raw).symptom_histogram is None
    assert "Symptoms/Report" not in render_stats([compute_stats(raw)])


def test_extracted_column_needs_one_run():
    dataset = load_dataset(SMALL)
    records = [
        EvaluationRecord(id=report.id, model=model, strategy=strategy, raw_ref="r", links=links)
        for model, strategy, links in (
            ("m1", "taco", {"pyrexia": ["fever"]}),
            ("m1", "tasi", {"pyrexia": ["fever"], "chills": ["chills"]}),
            ("m2", "taco", {}),
        )
        for report in dataset.reports
    ]
    with pytest.raises(RangeError):
        compute_stats(dataset, records)
    with pytest.raises(RangeError):
        compute_stats(dataset, records, strategy="taco")

    assert compute_stats(dataset, records, model="m1", strategy="taco").extracted_symptoms.average == 1
    assert compute_stats(dataset, records, model="m1", strategy="tasi").extracted_symptoms.average == 2
    assert compute_stats(dataset, records, model="m2").extracted_symptoms.max == 0
    assert compute_stats(dataset, records, model="m3").extracted_symptoms is None


def test_stats_empty_dataset():
    with pytest.raises(EmptyInputError):
        compute_stats(Dataset(name="empty", reports=[]))


def test_render_stats_lists_every_dataset():
    dataset = load_dataset(SMALL)
    text = render_stats([compute_stats(dataset), compute_stats(build_subset(dataset, "top", 1))])
    assert "small (# of Reports: 4)" in text
    assert "common-1 (# of Reports: 2)" in text
    assert "Median Length" in text


def test_symptom_frequencies_ordering():
    ranked = symptom_frequencies(load_dataset(SMALL))
    assert ranked[0] == ("Pyrexia", 2)
    assert [term for term, _ in ranked[1:]] == [
        "Chills", "Dizziness", "Fatigue", "Headache", "Pain in extremity", "Pruritus", "Rash", "Swelling",
    ]
    assert all(count == 1 for _, count in ranked[1:])


def test_symptom_frequencies_match_a_recount(synthetic):
    counts = {}
    for annotation in synthetic.gold.values():
        for term in {normalize_term(t) for t in annotation.links}:
            counts[term] = counts.get(term, 0) + 1
    assert {normalize_term(t): c for t, c in symptom_frequencies(synthetic)} == counts


def test_symptom_frequencies_without_gold():
    with pytest.raises(EmptyGoldError):
        symptom_frequencies(make_dataset({"A": {}}))


def test_subsets():
    dataset = load_dataset(SMALL)
    common = build_subset(dataset, "top", 1)
    assert common.name == "common-1"
    assert [r.id for r in common.reports] == ["S1", "S4"]
    assert common.gold["S4"] == dataset.gold["S4"]

    rare = build_subset(dataset, "bottom", 2)
    assert rare.name == "rare-2"
    assert [r.id for r in rare.reports] == ["S3"]

    everything = build_subset(dataset, "top", 9)
    assert len(everything) == 4


@pytest.mark.parametrize("selector,k", [("top", 0), ("bottom", 10), ("middle", 1)])
def test_subset_range(selector, k):
    with pytest.raises(RangeError):
        build_subset(load_dataset(SMALL), selector, k)


@pytest.mark.parametrize("selector", ["top", "bottom"])
def test_subset_membership_and_nesting(synthetic, selector):
    ranked = symptom_frequencies(synthetic)
    previous = set()
    for k in range(1, len(ranked) + 1):
        chosen = ranked[:k] if selector == "top" else ranked[-k:]
        selected = {normalize_term(term) for term, _ in chosen}
        kept = {r.id for r in build_subset(synthetic, selector, k).reports}
        for report in synthetic.reports:
            linked = {normalize_term(term) for term in synthetic.gold[report.id].links}
            assert (report.id in kept) == bool(linked & selected), (k, report.id)
        assert previous <= kept
        previous = kept


def test_histogram():
    assert symptom_count_histogram(load_dataset(SMALL)) == {1: 1, 2: 1, 3: 1, 4: 1}


def test_histogram_buckets():
    terms = ["Pyrexia", "Rash", "Headache", "Chills", "Nausea", "Fatigue", "Myalgia"]
    dataset = make_dataset({
        "A": {t: [t.lower()] for t in terms[:2]},
        "B": {t: [t.lower()] for t in terms[2:4]},
        "C": {t: [t.lower()] for t in terms},
    })
    assert symptom_count_histogram(dataset) == {2: 2, 7: 1}


def test_histogram_counts_unannotated_reports_as_zero():
    dataset = make_dataset({"A": {"Pyrexia": ["fever"]}, "B": {}})
    assert symptom_count_histogram(dataset) == {0: 1, 1: 1}


def test_save_then_load_preserves_content(tmp_path, synthetic):
    path = str(tmp_path / "copy.jsonl")
    save_dataset(synthetic, path)
    loaded = load_dataset(path, name=synthetic.name)
    assert loaded == synthetic

    again = str(tmp_path / "again.jsonl")
    save_dataset(loaded, again)
    assert (tmp_path / "copy.jsonl").read_bytes() == (tmp_path / "again.jsonl").read_bytes()


def test_load_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        load_dataset(str(tmp_path / "absent.jsonl"))


def test_load_reports_parse_line(tmp_path):
    good = {"id": "A", "text": "fever", "suggested": [{"term": "Pyrexia"}]}
    path = write_lines(tmp_path / "bad.jsonl", [good, "{not json"])
    with pytest.raises(DatasetParseError) as e:
        load_dataset(path)
    assert e.value.line == 2


def test_load_rejects_duplicate_ids(tmp_path):
    record = {"id": "A", "text": "fever", "suggested": [{"term": "Pyrexia"}]}
    path = write_lines(tmp_path / "dup.jsonl", [record, record])
    with pytest.raises(DatasetValidationError) as e:
        load_dataset(path)
    assert e.value.report_id == "A"
    assert e.value.line == 2


@pytest.mark.parametrize("record", [
    {"id": "A", "text": "fever", "suggested": []},
    {"id": "A", "text": "  ", "suggested": [{"term": "Pyrexia"}]},
    {"id": "A", "text": "fever", "suggested": [{"term": "Pyrexia"}, {"term": "pyrexia"}]},
    {"id": "A", "text": "fever", "suggested": [{"term": "Pyrexia"}], "gold": {"Rash": ["rash"]}},
    {"id": "A", "text": "fever", "suggested": [{"term": "Pyrexia"}], "gold": {"Pyrexia": []}},
])
def test_load_rejects_invariant_violations(tmp_path, record):
    with pytest.raises(DatasetValidationError):
        load_dataset(write_lines(tmp_path / "invalid.jsonl", [record]))


def test_gold_token_lists_are_joined(tmp_path):
    record = {
        "id": "A",
        "text": "high temperature overnight",
        "suggested": [{"term": "Pyrexia"}],
        "gold": {"Pyrexia": [["high", "temperature"]]},
    }
    dataset = load_dataset(write_lines(tmp_path / "tokens.jsonl", [record]))
    assert dataset.gold["A"].links == {"Pyrexia": ["high temperature"]}


def test_ingest_vaers():
    dataset = ingest_vaers(str(FIXTURES / "vaers_data.csv"), str(FIXTURES / "vaers_symptoms.csv"))
    assert [r.id for r in dataset.reports] == ["1001", "1002"]
    assert dataset.reports[1].suggested_terms() == ["Pain in extremity", "Headache", "Injection site pain"]
    assert dataset.gold == {}


def test_ingest_missing_column(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("VAERS_ID,RECVDATE\n1,01/01/2021\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        ingest_vaers(str(data), str(FIXTURES / "vaers_symptoms.csv"))


def test_ingest_duplicate_id(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("VAERS_ID,SYMPTOM_TEXT\n1001,fever\n1001,fever again\n", encoding="utf-8")
    with pytest.raises(DuplicateIdError):
        ingest_vaers(str(data), str(FIXTURES / "vaers_symptoms.csv"))


@pytest.fixture
def released():
    path = released_file("sympcoder.jsonl")
    if path is None:
        pytest.skip("released dataset not available")
    return load_dataset(str(path))


def test_released_dataset_sizes(released):
    assert len(released) == 487
    assert len(build_subset(released, "top", 50)) == 427
    assert len(build_subset(released, "bottom", 50)) == 22
