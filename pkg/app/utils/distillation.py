"""
Turn raw model responses into validated term mappings and mention lists.

Responses arrive wrapped in prose, fenced, truncated at the token limit or not
structured at all. Each recovery step that fired is recorded in salvage_notes
so a distilled result can be audited against its raw text.
"""
import ast
import json
import logging
import re
from typing import Any, Dict, List, Optional, Tuple, Union

from app.errors import MalformedOutput
from app.schemas.backend import RawCompletion
from app.schemas.coded import CodedOutput, ExtractionList
from app.schemas.corpus import Report
from app.utils.metrics import fuzzy_ratio
from app.utils.normalize import normalize_term

__all__ = ["distill", "distill_extraction", "normalize_term", "FUZZY_KEY_THRESHOLD"]

logger = logging.getLogger(__name__)

FUZZY_KEY_THRESHOLD = 0.9

NULL_MENTIONS = {"none", "n/a", ""}

# salvage note vocabulary
FENCED_BLOCK = "fenced_block"
BALANCED_OBJECT = "balanced_object"
BALANCED_ARRAY = "balanced_array"
KEY_VALUE_HARVEST = "key_value_harvest"
LINE_HARVEST = "line_harvest"
TRUNCATION_CLOSED = "truncation_closed"
TRAILING_COMMAS_REMOVED = "trailing_commas_removed"
PYTHON_LITERAL = "python_literal"

_FENCE = re.compile(r"```[ \t]*(?:json|JSON|python)?[ \t]*\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA = re.compile(r",\s*([}\]])")
_KEY_VALUE_LINE = re.compile(
    r"^[ \t]*(?:[-*\u2022]|\d+[.)])?[ \t]*([^\n:\[\]{}]+?)[ \t]*:[ \t]*\[([^\]\n]*)\]", re.MULTILINE
)
_LIST_LINE = re.compile(r"^[ \t]*(?:[-*\u2022]|\d+[.)])[ \t]+(.+?)[ \t]*$", re.MULTILINE)
_PAIRS = {"{": "}", "[": "]"}
_QUOTES = "\"'"


def _raw_text(raw: Union[RawCompletion, str]) -> str:
    return raw.text if isinstance(raw, RawCompletion) else raw


def _parse_structure(text: str) -> Tuple[Optional[Any], List[str]]:
    """JSON first, then JSON with trailing commas removed, then a Python literal."""
    try:
        return json.loads(text), []
    except ValueError:
        pass
    cleaned = _TRAILING_COMMA.sub(r"\1", text)
    if cleaned != text:
        try:
            return json.loads(cleaned), [TRAILING_COMMAS_REMOVED]
        except ValueError:
            pass
    try:
        return ast.literal_eval(text.strip()), [PYTHON_LITERAL]
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        return None, []


def _scan(fragment: str) -> Tuple[List[str], Optional[str], List[int], Optional[int]]:
    """
    Walk a fragment tracking open brackets and string state.

    Returns:
        Tuple: (open bracket stack, open quote char or None, positions of commas
        outside strings, index where the outermost bracket closed or None)
    """
    stack: List[str] = []
    quote: Optional[str] = None
    commas: List[int] = []
    escaped = False
    for i, ch in enumerate(fragment):
        if quote is not None:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in _QUOTES:
            quote = ch
        elif ch in _PAIRS:
            stack.append(ch)
        elif ch in ("}", "]"):
            if stack and _PAIRS[stack[-1]] == ch:
                stack.pop()
                if not stack:
                    return stack, None, commas, i
        elif ch == ",":
            commas.append(i)
    return stack, quote, commas, None


def _close(fragment: str) -> str:
    stack, quote, _, _ = _scan(fragment)
    closing = (quote or "") + "".join(_PAIRS[ch] for ch in reversed(stack))
    return fragment.rstrip() + closing if not quote else fragment + closing


def _balanced(text: str, opener: str) -> Tuple[Optional[Any], List[str]]:
    """
    Parse the first balanced structure starting at opener. A structure cut off
    before its closing bracket is completed, dropping trailing partial
    elements until it parses.
    """
    start = text.find(opener)
    if start < 0:
        return None, []
    fragment = text[start:]
    _, _, commas, end = _scan(fragment)
    if end is not None:
        return _parse_structure(fragment[:end + 1])

    candidates = [fragment] + [fragment[:pos] for pos in reversed(commas)]
    for candidate in candidates:
        value, notes = _parse_structure(_close(candidate))
        if value is not None:
            return value, [TRUNCATION_CLOSED] + notes
    return None, []


def _strip_item(item: str) -> str:
    return item.strip().strip(_QUOTES).strip()


def _coerce_mentions(value: Any) -> List[str]:
    """Flatten a parsed value into mention strings, dropping null markers, bare punctuation and exact repeats."""
    if value is None:
        flat: List[str] = []
    elif isinstance(value, (list, tuple)):
        flat = []
        for item in value:
            flat.extend(_coerce_mentions(item))
    elif isinstance(value, dict):
        flat = []
    else:
        flat = [str(value)]

    mentions: List[str] = []
    for item in flat:
        item = item.strip()
        if item.lower() in NULL_MENTIONS or not normalize_term(item) or item in mentions:
            continue
        mentions.append(item)
    return mentions


def _match_key(key: str, index: Dict[str, str]) -> Tuple[Optional[str], Optional[str]]:
    """Resolve an output key to a normalized suggested term; exact first, then fuzzy."""
    norm = normalize_term(key)
    if norm in index:
        return norm, None
    scored = [(fuzzy_ratio(norm, term), term) for term in index]
    scored = [(score, term) for score, term in scored if score >= FUZZY_KEY_THRESHOLD]
    if not scored:
        return None, None
    _, best = min(scored, key=lambda item: (-item[0], item[1]))
    return best, f"fuzzy_key:{key}->{best}"


def _link(mapping: Dict[Any, Any], report: Report) -> Tuple[Dict[str, List[str]], List[str], List[str]]:
    index = report.suggested_index()
    links: Dict[str, List[str]] = {}
    unlinkable: List[str] = []
    notes: List[str] = []
    for key, value in mapping.items():
        key = str(key).strip().strip("*`").strip()
        mentions = _coerce_mentions(value)
        if not mentions:
            continue
        target, note = _match_key(key, index)
        if target is None:
            if key not in unlinkable:
                unlinkable.append(key)
            continue
        if note:
            notes.append(note)
        merged = links.setdefault(target, [])
        merged.extend(m for m in mentions if m not in merged)
    return links, unlinkable, notes


def _harvest_pairs(text: str) -> Dict[str, List[str]]:
    harvested: Dict[str, List[str]] = {}
    for match in _KEY_VALUE_LINE.finditer(text):
        key = _strip_item(match.group(1))
        if not key:
            continue
        values = [_strip_item(v) for v in match.group(2).split(",")]
        harvested.setdefault(key, []).extend(values)
    return harvested


def _recover_mapping(text: str) -> Tuple[Dict[Any, Any], List[str]]:
    for block in _FENCE.findall(text):
        value, notes = _parse_structure(block.strip())
        if isinstance(value, dict):
            return value, [FENCED_BLOCK] + notes

    value, notes = _balanced(text, "{")
    if isinstance(value, dict):
        return value, [BALANCED_OBJECT] + notes

    harvested = _harvest_pairs(text)
    if harvested:
        return harvested, [KEY_VALUE_HARVEST]

    raise MalformedOutput("no term mapping could be recovered from the model output", raw=text)


def distill(raw: Union[RawCompletion, str], report: Report) -> CodedOutput:
    """
    Distill a raw response into a CodedOutput for one report.

    Strategies run in order until one yields a mapping: a fenced code block
    holding an object, the first balanced-brace object (closed if truncated),
    then "Term: [m1, m2]" line harvesting. Keys resolve to suggested terms by
    normalized equality, then by fuzzy ratio of at least 0.9.

    Args:
        raw: Model response
        report: Report supplying the suggested-term universe

    Returns:
        CodedOutput: Links keyed by normalized suggested term

    Raises:
        MalformedOutput: If no strategy recovers a mapping
    """
    text = _raw_text(raw)
    mapping, notes = _recover_mapping(text)
    links, unlinkable, key_notes = _link(mapping, report)
    if unlinkable:
        logger.debug("Report %s: unlinkable keys %s", report.id, unlinkable)
    return CodedOutput(
        report_id=report.id,
        links=links,
        unlinkable_keys=unlinkable,
        salvage_notes=notes + key_notes,
    )


def _recover_list(text: str) -> Tuple[List[Any], List[str]]:
    for block in _FENCE.findall(text):
        value, notes = _parse_structure(block.strip())
        if isinstance(value, list):
            return value, [FENCED_BLOCK] + notes
        if isinstance(value, dict):
            for item in value.values():
                if isinstance(item, list):
                    return item, [FENCED_BLOCK] + notes

    value, notes = _balanced(text, "[")
    if isinstance(value, list):
        return value, [BALANCED_ARRAY] + notes

    lines = [_strip_item(m.rstrip(",")) for m in _LIST_LINE.findall(text)]
    lines = [line for line in lines if line]
    if lines:
        return lines, [LINE_HARVEST]

    raise MalformedOutput("no mention list could be recovered from the model output", raw=text)


def distill_extraction(raw: Union[RawCompletion, str], report_id: str = "") -> ExtractionList:
    """
    Distill a phase-one response into a mention list.

    Uses the same ladder adapted to list shapes: fenced list, first balanced
    bracket list, then bullet or numbered lines. Mentions are deduplicated
    under normalize_term keeping the first occurrence.

    Raises:
        MalformedOutput: If no strategy recovers a list
    """
    items, notes = _recover_list(_raw_text(raw))
    mentions: List[str] = []
    seen = set()
    for mention in _coerce_mentions(items):
        key = normalize_term(mention)
        if not key or key in seen:
            continue
        seen.add(key)
        mentions.append(mention)
    return ExtractionList(report_id=report_id, mentions=mentions, salvage_notes=notes)
