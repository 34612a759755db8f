import hashlib
import json
import random
from typing import Dict, List, Optional

from app.errors import NotFoundError, RangeError
from app.schemas.backend import InferenceParams, NoiseProfile, RawCompletion
from app.schemas.corpus import Dataset, GoldAnnotation, Report
from app.schemas.prompt import Prompt, PromptKind
from app.utils.backends import ChatBackend, completion_body
from app.utils.cache import CompletionCache, prompt_fingerprint
from app.utils.corpus import symptom_frequencies
from app.utils.normalize import normalize_term

ORACLE_MODEL = "oracle"


def _rng(noise: NoiseProfile, report_id: str) -> random.Random:
    digest = hashlib.sha256(f"{noise.seed}:{report_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def oracle_mapping(
    report: Report,
    gold: GoldAnnotation,
    noise: NoiseProfile,
    frequencies: Optional[Dict[str, int]] = None,
) -> Dict[str, List[str]]:
    """
    Derive a term -> mentions mapping from gold after applying controlled noise.

    Args:
        report: The report being answered
        gold: Its gold annotation
        noise: Corruption to apply
        frequencies: Corpus frequency per normalized term; unknown terms count as 0

    Returns:
        Dict[str, List[str]]: Mapping keyed by original term spelling

    Raises:
        RangeError: If more terms are dropped than gold links or more spurious
            terms are requested than unlinked suggestions exist
    """
    frequencies = frequencies or {}
    terms = list(gold.links)
    if noise.drop_terms > len(terms):
        raise RangeError(f"cannot drop {noise.drop_terms} term(s) from a gold annotation with {len(terms)}")

    # lowest frequency first, ties broken lexicographically
    ranked = sorted(terms, key=lambda t: (frequencies.get(normalize_term(t), 0), normalize_term(t)))
    dropped = set(ranked[:noise.drop_terms])
    mapping = {term: list(gold.links[term]) for term in terms if term not in dropped}

    rng = _rng(noise, report.id)
    slots = [(term, i) for term in mapping for i in range(len(mapping[term]))]
    count = int(noise.perturb_mentions * len(slots) + 0.5)
    for term, i in sorted(rng.sample(slots, count)):
        mention = mapping[term][i]
        at = rng.randrange(len(mention))
        mapping[term][i] = mention[:at + 1] + mention[at:]

    linked = {normalize_term(t) for t in gold.links}
    unlinked = [t for t in report.suggested_terms() if normalize_term(t) not in linked]
    if noise.add_spurious > len(unlinked):
        raise RangeError(
            f"cannot add {noise.add_spurious} spurious term(s); report {report.id} has {len(unlinked)} unlinked"
        )
    for term in unlinked[:noise.add_spurious]:
        mapping[term] = [f"possible {term.lower()}"]
    return mapping


def render_oracle_response(mapping: Dict[str, List[str]], extraction: bool = False) -> str:
    """Wrap the mapping (or its flattened mention list) the way a chatty model would."""
    if extraction:
        seen = set()
        mentions = []
        for values in mapping.values():
            for mention in values:
                key = normalize_term(mention)
                if key not in seen:
                    seen.add(key)
                    mentions.append(mention)
        payload = json.dumps(mentions, ensure_ascii=False)
        return f"Here are the extracted symptoms:\n```json\n{payload}\n```"
    payload = json.dumps(mapping, ensure_ascii=False, indent=2)
    return f"Here is the coded output:\n```json\n{payload}\n```"


def oracle_complete(
    report: Report,
    gold: GoldAnnotation,
    noise: NoiseProfile,
    frequencies: Optional[Dict[str, int]] = None,
    extraction: bool = False,
) -> RawCompletion:
    """
    Deterministic completion answering from gold. With zero noise the
    distilled output reproduces the gold links exactly.
    """
    text = render_oracle_response(oracle_mapping(report, gold, noise, frequencies), extraction)
    params = InferenceParams(model=ORACLE_MODEL)
    return RawCompletion(
        text=text,
        model=ORACLE_MODEL,
        prompt_fingerprint=prompt_fingerprint(f"{report.id}:{extraction}", params, noise.signature()),
    )


def frequency_index(dataset: Dataset) -> Dict[str, int]:
    return {normalize_term(term): count for term, count in symptom_frequencies(dataset)}


class OracleBackend(ChatBackend):
    """Chat backend that answers every prompt from the dataset's gold annotations."""

    def __init__(
        self,
        dataset: Dataset,
        noise: Optional[NoiseProfile] = None,
        cache: Optional[CompletionCache] = None,
        max_in_flight: int = 4,
    ):
        super().__init__(cache, max_in_flight)
        self.dataset = dataset
        self.noise = noise or NoiseProfile()
        self.namespace = f"oracle:{self.noise.signature()}"
        self.frequencies = frequency_index(dataset)

    async def _request(self, prompt: Prompt, params: InferenceParams) -> bytes:
        report = self.dataset.report(prompt.report_id)
        gold = self.dataset.gold.get(prompt.report_id)
        if report is None or gold is None:
            raise NotFoundError(f"no gold annotation for report {prompt.report_id}")
        mapping = oracle_mapping(report, gold, self.noise, self.frequencies)
        text = render_oracle_response(mapping, extraction=prompt.strategy == PromptKind.TASI_PHASE1)
        return completion_body(text, params.model)
