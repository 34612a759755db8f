import pytest

from app.errors import DataIOError, TemplateError
from app.schemas.prompt import PromptKind
from app.utils.prompting import (
    TACO_PLACEHOLDERS,
    build_taco_prompt,
    build_tasi_prompts,
    format_terms,
    load_template,
    parse_template,
)
from conftest import make_report

TEMPLATE = """[header]
Code the report.

[body]
Text: {clinical_text}
Terms: [{suggested_terms}]

[output_instruction]
Answer with JSON like {"Pyrexia": ["fever"]}.
"""


def test_taco_prompt_contains_text_and_terms():
    report = make_report("A", ["Pyrexia", "Injection site erythema"], text="Fever and a red arm.")
    prompt = build_taco_prompt(report)
    assert prompt.strategy == PromptKind.TACO
    assert prompt.report_id == "A"
    assert "Fever and a red arm." in prompt.text
    assert '"Pyrexia", "Injection site erythema"' in prompt.text


def test_format_terms_keeps_order_and_spelling():
    assert format_terms(["Rash", "pyrexia ", "Injection site erythema"]) == '"Rash", "pyrexia ", "Injection site erythema"'


def test_placeholders_in_clinical_text_are_not_expanded():
    report = make_report("A", ["Pyrexia"], text="Patient wrote {suggested_terms} on the form.")
    prompt = build_taco_prompt(report, parse_template(TEMPLATE, TACO_PLACEHOLDERS))
    assert "Text: Patient wrote {suggested_terms} on the form." in prompt.text
    assert 'Terms: ["Pyrexia"]' in prompt.text


def test_tasi_prompts_chain_extracted_mentions():
    report = make_report("B", ["Pyrexia", "Headache"], text="Fever and head pain.")
    phase1, continue_with = build_tasi_prompts(report)
    assert phase1.strategy == PromptKind.TASI_PHASE1
    assert "Fever and head pain." in phase1.text
    assert "Pyrexia" not in phase1.text

    phase2 = continue_with(["Fever", "head pain"])
    assert phase2.strategy == PromptKind.TASI_PHASE2
    assert '["Fever", "head pain"]' in phase2.text
    assert '"Pyrexia", "Headache"' in phase2.text


def test_tasi_phase2_with_no_mentions():
    report = make_report("C", ["Pyrexia"])
    _, continue_with = build_tasi_prompts(report)
    assert "Extracted Mentions: []" in continue_with([]).text


@pytest.mark.parametrize("source", [
    TEMPLATE.replace("[header]\n", ""),
    TEMPLATE + "\n[footer]\nbye\n",
    TEMPLATE + "\n[body]\nagain\n",
    TEMPLATE.replace("{clinical_text}", "the text"),
    TEMPLATE.replace("Terms: [{suggested_terms}]", "Terms: [{suggested_terms}] and {suggested_terms}"),
])
def test_invalid_templates(source):
    with pytest.raises(TemplateError):
        parse_template(source, TACO_PLACEHOLDERS)


def test_load_template_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        load_template(str(tmp_path / "absent.txt"), TACO_PLACEHOLDERS)


def test_load_template_from_file(tmp_path):
    path = tmp_path / "taco.txt"
    path.write_text(TEMPLATE, encoding="utf-8")
    template = load_template(str(path), TACO_PLACEHOLDERS)
    assert template.header == "Code the report."
    assert template.output_instruction.startswith("Answer with JSON")
