import json

import pytest

from app.errors import MalformedOutput
from app.schemas.backend import RawCompletion
from app.utils.distillation import distill, distill_extraction, normalize_term
from conftest import FIXTURES, make_report

SUGGESTED = ["Pyrexia", "Rash macular", "Injection site erythema", "Headache", "Decreased appetite"]
REPORT = make_report("D1", SUGGESTED, text="Fever, red arm and a headache; not eating.")


def load_cases():
    with open(FIXTURES / "distill_cases.jsonl", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


CASES = load_cases()


@pytest.mark.parametrize("case", CASES, ids=[case["name"] for case in CASES])
def test_distill_cases(case):
    if case["malformed"]:
        with pytest.raises(MalformedOutput) as e:
            distill(case["raw"], REPORT)
        assert e.value.raw == case["raw"]
        return
    coded = distill(case["raw"], REPORT)
    assert coded.report_id == "D1"
    assert coded.links == case["links"]
    assert coded.unlinkable_keys == case["unlinkable"]
    assert coded.salvage_notes == case["notes"]


@pytest.mark.parametrize("case", [c for c in CASES if not c["malformed"]], ids=lambda c: c["name"])
def test_distill_is_idempotent(case):
    coded = distill(case["raw"], REPORT)
    assert distill(json.dumps(coded.links), REPORT).links == coded.links


def test_links_are_subset_of_suggested_terms():
    index = REPORT.suggested_index()
    for case in CASES:
        if not case["malformed"]:
            assert set(distill(case["raw"], REPORT).links) <= set(index)


def test_distill_accepts_raw_completion():
    raw = RawCompletion(text='{"Headache": ["headache"]}', model="m", prompt_fingerprint="f", truncated=True)
    assert distill(raw, REPORT).links == {"headache": ["headache"]}


def test_mentions_keep_model_spelling():
    coded = distill('{"Pyrexia": ["Fever", "fever"]}', REPORT)
    assert coded.links == {"pyrexia": ["Fever", "fever"]}


def test_punctuation_only_mentions_are_dropped():
    coded = distill('{"Pyrexia": ["...", "fever"], "Headache": ["()"], "Rash macular": ["."]}', REPORT)
    assert coded.links == {"pyrexia": ["fever"]}
    assert coded.unlinkable_keys == []
    assert not coded.malformed


def test_extraction_from_fenced_list():
    raw = 'Mentions:\n```json\n["fever", "Fever", "red arm", "none"]\n```'
    extracted = distill_extraction(raw, "D1")
    assert extracted.report_id == "D1"
    assert extracted.mentions == ["fever", "red arm"]
    assert extracted.salvage_notes == ["fenced_block"]


def test_extraction_from_object_value():
    extracted = distill_extraction('```json\n{"symptoms": ["fever", "headache"]}\n```')
    assert extracted.mentions == ["fever", "headache"]


def test_extraction_from_truncated_array():
    extracted = distill_extraction('The mentions are ["fever", "red arm", "not eat')
    assert extracted.mentions == ["fever", "red arm", "not eat"]
    assert extracted.salvage_notes == ["balanced_array", "truncation_closed"]


def test_extraction_from_bullets():
    extracted = distill_extraction("Symptoms found:\n- fever\n- red arm\n2. headache")
    assert extracted.mentions == ["fever", "red arm", "headache"]
    assert extracted.salvage_notes == ["line_harvest"]


def test_extraction_with_empty_list():
    assert distill_extraction("[]").mentions == []


def test_extraction_malformed():
    with pytest.raises(MalformedOutput):
        distill_extraction("No symptoms could be identified.")


@pytest.mark.parametrize("raw,expected", [
    ("  Pyrexia ", "pyrexia"),
    ("INJECTION   site\terythema", "injection site erythema"),
    ('"Rash."', "rash"),
    ("(Headache)", "headache"),
    ("Café au lait spots", "café au lait spots"),
    ("", ""),
])
def test_normalize_term(raw, expected):
    assert normalize_term(raw) == expected
    assert normalize_term(normalize_term(raw)) == normalize_term(raw)
