import json
import re
from functools import lru_cache, partial
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, Optional, Sequence, Tuple

from app.errors import DataIOError, TemplateError
from app.schemas.corpus import Report
from app.schemas.prompt import Prompt, PromptKind, PromptTemplate, TasiTemplates

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"

TACO_PLACEHOLDERS = frozenset({"clinical_text", "suggested_terms"})
TASI_PHASE1_PLACEHOLDERS = frozenset({"clinical_text"})
TASI_PHASE2_PLACEHOLDERS = frozenset({"clinical_text", "suggested_terms", "extracted_list"})

SECTIONS = ("header", "body", "output_instruction")
_SECTION_LINE = re.compile(r"^\[(\w+)\]\s*$")
_PLACEHOLDER = re.compile(r"\{(clinical_text|suggested_terms|extracted_list)\}")


def parse_template(source: str, placeholders: FrozenSet[str], origin: str = "<template>") -> PromptTemplate:
    """
    Parse template text with [header], [body] and [output_instruction] sections.

    Args:
        source: Template file contents
        placeholders: Placeholders the template must contain exactly once
        origin: Name used in error messages

    Returns:
        PromptTemplate: The parsed template

    Raises:
        TemplateError: If a section is missing, unknown or repeated, or a placeholder count is wrong
    """
    parts: Dict[str, list] = {}
    current = None
    for line in source.splitlines():
        match = _SECTION_LINE.match(line)
        if match:
            current = match.group(1)
            if current not in SECTIONS:
                raise TemplateError(f"{origin}: unknown section [{current}]")
            if current in parts:
                raise TemplateError(f"{origin}: section [{current}] appears twice")
            parts[current] = []
        elif current is not None:
            parts[current].append(line)

    missing = [s for s in SECTIONS if s not in parts]
    if missing:
        raise TemplateError(f"{origin}: missing section(s) {', '.join('[' + s + ']' for s in missing)}")

    template = PromptTemplate(
        header="\n".join(parts["header"]).strip(),
        body="\n".join(parts["body"]).strip(),
        output_instruction="\n".join(parts["output_instruction"]).strip(),
        placeholders=placeholders,
    )
    check_placeholders(template, origin)
    return template


def load_template(path: str, placeholders: FrozenSet[str]) -> PromptTemplate:
    try:
        source = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"could not read template {path}: {str(e)}")
    return parse_template(source, placeholders, origin=str(path))


def check_placeholders(template: PromptTemplate, origin: str = "<template>") -> None:
    joined = template.joined()
    for name in sorted(template.placeholders):
        count = joined.count("{" + name + "}")
        if count != 1:
            raise TemplateError(f"{origin}: placeholder {{{name}}} must appear exactly once, found {count}")


@lru_cache(maxsize=None)
def default_taco_template() -> PromptTemplate:
    return load_template(str(TEMPLATE_DIR / "taco.txt"), TACO_PLACEHOLDERS)


@lru_cache(maxsize=None)
def default_tasi_templates() -> TasiTemplates:
    return TasiTemplates(
        phase1=load_template(str(TEMPLATE_DIR / "tasi_phase1.txt"), TASI_PHASE1_PLACEHOLDERS),
        phase2=load_template(str(TEMPLATE_DIR / "tasi_phase2.txt"), TASI_PHASE2_PLACEHOLDERS),
    )


def format_terms(terms: Iterable[str]) -> str:
    """Comma-separated quoted list, original order, terms kept verbatim."""
    return ", ".join(f'"{term}"' for term in terms)


def format_mentions(mentions: Sequence[str]) -> str:
    return json.dumps(list(mentions), ensure_ascii=False)


def render(template: PromptTemplate, values: Dict[str, str]) -> str:
    """
    Substitute placeholders in a single pass, so text injected for one
    placeholder is never expanded again.

    Raises:
        TemplateError: If a required placeholder is missing or repeated, or has no value
    """
    check_placeholders(template)
    absent = template.placeholders - set(values)
    if absent:
        raise TemplateError(f"no value for placeholder(s) {', '.join(sorted(absent))}")
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)] if m.group(1) in values else m.group(0), template.joined())


def build_taco_prompt(report: Report, template: Optional[PromptTemplate] = None) -> Prompt:
    """
    Render the single TACO prompt: extract mentions and link them to suggested terms in one step.

    Args:
        report: Report supplying the clinical text and suggested terms
        template: Template to use; the shipped default when omitted

    Returns:
        Prompt: The rendered prompt
    """
    template = template or default_taco_template()
    text = render(template, {
        "clinical_text": report.text,
        "suggested_terms": format_terms(report.suggested_terms()),
    })
    return Prompt(text=text, strategy=PromptKind.TACO, report_id=report.id)


def _render_phase2(report: Report, template: PromptTemplate, extracted: Sequence[str]) -> Prompt:
    text = render(template, {
        "clinical_text": report.text,
        "suggested_terms": format_terms(report.suggested_terms()),
        "extracted_list": format_mentions(extracted),
    })
    return Prompt(text=text, strategy=PromptKind.TASI_PHASE2, report_id=report.id)


def build_tasi_prompts(
    report: Report, templates: Optional[TasiTemplates] = None
) -> Tuple[Prompt, Callable[[Sequence[str]], Prompt]]:
    """
    Render the TASI extraction prompt and return a continuation for the linking prompt.

    Args:
        report: Report supplying the clinical text and suggested terms
        templates: Template pair; the shipped defaults when omitted

    Returns:
        Tuple[Prompt, Callable]: The phase-1 prompt and a function mapping the
        distilled phase-1 mention list to the phase-2 prompt
    """
    templates = templates or default_tasi_templates()
    phase1 = Prompt(
        text=render(templates.phase1, {"clinical_text": report.text}),
        strategy=PromptKind.TASI_PHASE1,
        report_id=report.id,
    )
    return phase1, partial(_render_phase2, report, templates.phase2)
