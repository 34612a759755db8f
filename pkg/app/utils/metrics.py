import logging
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from Levenshtein import distance
from sacrebleu.metrics import BLEU
from scipy.optimize import linear_sum_assignment

from app.errors import DegenerateVectorError, DimensionError, EmptyInputError
from app.schemas.backend import EmbeddingVector
from app.schemas.metrics import (
    LinkScores,
    MatchMode,
    MatchPair,
    MatchScores,
    ModeCounts,
    PairKind,
    TermAlignment,
    TermPair,
)
from app.utils.normalize import normalize_term

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.8
# Absorbs float noise when comparing a ratio against the threshold
_TOLERANCE = 1e-12

Vector = Union[EmbeddingVector, Sequence[float], np.ndarray]


def fuzzy_ratio(a: str, b: str) -> float:
    """
    Normalized Levenshtein similarity of two strings after normalize_term.

    Returns:
        float: 1 - distance / longer length, in [0, 1]; 1.0 when both are empty
    """
    na, nb = normalize_term(a), normalize_term(b)
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - distance(na, nb) / longest


def _dedupe(terms: Iterable[str]) -> List[str]:
    seen = set()
    unique = []
    for term in terms:
        key = normalize_term(term)
        if key not in seen:
            seen.add(key)
            unique.append(term)
    return unique


def _exact_pass(predicted: List[str], gold: List[str]) -> Tuple[List[TermPair], List[str], List[str]]:
    gold_index = {normalize_term(g): g for g in gold}
    pairs = []
    matched_gold = set()
    leftover_predicted = []
    for term in predicted:
        partner = gold_index.get(normalize_term(term))
        if partner is None:
            leftover_predicted.append(term)
            continue
        pairs.append(TermPair(predicted=term, gold=partner, kind=PairKind.EXACT, similarity=1.0))
        matched_gold.add(partner)
    return pairs, leftover_predicted, [g for g in gold if g not in matched_gold]


def _fuzzy_pass(
    predicted: List[str], gold: List[str], threshold: float
) -> Tuple[List[TermPair], List[str], List[str]]:
    if not predicted or not gold:
        return [], list(predicted), list(gold)

    # lexicographic order makes the assignment deterministic under ties
    rows = sorted(predicted, key=lambda t: (normalize_term(t), t))
    cols = sorted(gold, key=lambda t: (normalize_term(t), t))
    similarity = np.array([[fuzzy_ratio(p, g) for g in cols] for p in rows], dtype=np.float64)
    eligible = similarity >= threshold - _TOLERANCE
    # the bonus outweighs any similarity total, so the most pairs win first and similarity breaks ties
    bonus = float(min(len(rows), len(cols)) + 1)
    weights = np.where(eligible, similarity + bonus, 0.0)

    pairs = []
    used_rows, used_cols = set(), set()
    for r, c in zip(*linear_sum_assignment(weights, maximize=True)):
        if not eligible[r, c]:
            continue
        exact = normalize_term(rows[r]) == normalize_term(cols[c])
        pairs.append(TermPair(
            predicted=rows[r],
            gold=cols[c],
            kind=PairKind.EXACT if exact else PairKind.FUZZY,
            similarity=min(1.0, float(similarity[r, c])),
        ))
        used_rows.add(rows[r])
        used_cols.add(cols[c])
    return (
        pairs,
        [p for p in predicted if p not in used_rows],
        [g for g in gold if g not in used_cols],
    )


def match_terms(
    predicted: Iterable[str], gold: Iterable[str], mode: MatchMode, threshold: float = DEFAULT_THRESHOLD
) -> TermAlignment:
    """
    One-to-one alignment of predicted terms to gold terms.

    Args:
        predicted: Predicted terms; duplicates under normalization are dropped
        gold: Gold terms; duplicates under normalization are dropped
        mode: EM pairs equal normalizations. Fuzzy finds, among pairs with
            fuzzy_ratio >= threshold, the assignment with the most pairs and then
            the highest total similarity. EMFuzzy runs EM, then Fuzzy on the
            leftovers of both sides.
        threshold: Minimum fuzzy_ratio of a fuzzy pair

    Returns:
        TermAlignment: Pairs plus the unmatched terms of each side
    """
    predicted, gold = _dedupe(predicted), _dedupe(gold)
    if mode == MatchMode.EM:
        pairs, left_p, left_g = _exact_pass(predicted, gold)
    elif mode == MatchMode.FUZZY:
        pairs, left_p, left_g = _fuzzy_pass(predicted, gold, threshold)
    else:
        pairs, left_p, left_g = _exact_pass(predicted, gold)
        fuzzy_pairs, left_p, left_g = _fuzzy_pass(left_p, left_g, threshold)
        pairs = pairs + fuzzy_pairs
    return TermAlignment(pairs=pairs, unmatched_predicted=left_p, unmatched_gold=left_g)


def align_all_modes(
    predicted: Iterable[str], gold: Iterable[str], threshold: float = DEFAULT_THRESHOLD
) -> Dict[MatchMode, TermAlignment]:
    predicted, gold = list(predicted), list(gold)
    return {mode: match_terms(predicted, gold, mode, threshold) for mode in MatchMode}


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if denominator else None


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def link_scores(alignments: Sequence[Mapping[MatchMode, TermAlignment]], macro: bool = False) -> LinkScores:
    """
    LINK precision and recall for every mode over a corpus.

    Micro averaging divides total pairs by total predicted (precision) and total
    gold (recall) terms. Macro averaging takes the mean of per-report values,
    skipping reports whose denominator is zero. A zero denominator overall
    yields None rather than 0.

    Args:
        alignments: One mapping of mode -> alignment per report
        macro: Average per report instead of over pooled counts

    Returns:
        LinkScores: Counts and precision/recall per mode

    Raises:
        EmptyInputError: If alignments is empty
    """
    if not alignments:
        raise EmptyInputError("no alignments to score")

    modes: Dict[MatchMode, ModeCounts] = {}
    for mode in MatchMode:
        matched = predicted = gold = 0
        per_precision: List[float] = []
        per_recall: List[float] = []
        for report in alignments:
            alignment = report[mode]
            matched += len(alignment.pairs)
            predicted += alignment.predicted_count
            gold += alignment.gold_count
            if alignment.predicted_count:
                per_precision.append(len(alignment.pairs) / alignment.predicted_count)
            if alignment.gold_count:
                per_recall.append(len(alignment.pairs) / alignment.gold_count)
        if macro:
            precision, recall = _mean(per_precision), _mean(per_recall)
        else:
            precision, recall = _ratio(matched, predicted), _ratio(matched, gold)
        modes[mode] = ModeCounts(matched=matched, predicted=predicted, gold=gold, precision=precision, recall=recall)
    return LinkScores(modes=modes, macro=macro)


def align_mentions(predicted: Sequence[str], gold: Sequence[str]) -> List[Tuple[str, str]]:
    """
    Pair mentions by maximum total fuzzy_ratio, one to one, without a threshold.

    Returns:
        List[Tuple[str, str]]: min(len(predicted), len(gold)) pairs in predicted order
    """
    if not predicted or not gold:
        return []
    similarity = np.array([[fuzzy_ratio(p, g) for g in gold] for p in predicted], dtype=np.float64)
    rows, cols = linear_sum_assignment(similarity, maximize=True)
    return [(predicted[r], gold[c]) for r, c in sorted(zip(rows, cols))]


@lru_cache(maxsize=None)
def _bleu_metric(order: int) -> BLEU:
    return BLEU(
        tokenize="none",
        lowercase=False,
        smooth_method="add-k",
        smooth_value=1,
        max_ngram_order=order,
        effective_order=False,
    )


def bleu(candidate: str, references: Sequence[str]) -> float:
    """
    Sentence-level BLEU on normalize_term tokens.

    Uses n-gram orders 1..min(4, candidate length) with add-one smoothing on
    orders above 1, geometric mean and a brevity penalty against the closest
    reference length.

    Args:
        candidate: Model mention
        references: Gold mentions; must not be empty

    Returns:
        float: Score in [0, 1]; 0.0 for an empty candidate

    Raises:
        EmptyInputError: If references is empty
    """
    if not references:
        raise EmptyInputError("bleu needs at least one reference")
    hypothesis = normalize_term(candidate)
    if not hypothesis:
        return 0.0
    normalized = [normalize_term(r) for r in references]
    if hypothesis in normalized:
        return 1.0
    order = min(4, len(hypothesis.split()))
    score = _bleu_metric(order).sentence_score(hypothesis, normalized).score / 100.0
    return min(1.0, max(0.0, score))


def _as_array(vector: Vector) -> np.ndarray:
    values = vector.values if isinstance(vector, EmbeddingVector) else vector
    return np.asarray(values, dtype=np.float64)


def cosine_similarity(u: Vector, v: Vector) -> float:
    """
    Cosine of the angle between two embeddings.

    Raises:
        DimensionError: If the vectors differ in length
        DegenerateVectorError: If either vector is all zeros
    """
    a, b = _as_array(u), _as_array(v)
    if a.shape != b.shape:
        raise DimensionError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise DegenerateVectorError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


async def score_mentions(
    alignment: TermAlignment,
    predicted_links: Mapping[str, Sequence[str]],
    gold_links: Mapping[str, Sequence[str]],
    embedder,
) -> Tuple[List[MatchPair], int]:
    """
    MATCH triples for every mention pair under the aligned term pairs.

    Args:
        alignment: EMFuzzy term alignment of one report
        predicted_links: Distilled links keyed as in the alignment's predicted side
        gold_links: Gold links keyed as in the alignment's gold side
        embedder: Anything with an async embed(text) -> EmbeddingVector

    Returns:
        Tuple[List[MatchPair], int]: Scored pairs and the number of mentions left unpaired
    """
    scored: List[MatchPair] = []
    unpaired = 0
    for pair in alignment.pairs:
        pred_mentions = list(predicted_links.get(pair.predicted, []))
        gold_mentions = list(gold_links.get(pair.gold, []))
        total = len(pred_mentions) + len(gold_mentions)
        # mentions with nothing left after normalization have no embedding; count them unpaired
        pred_mentions = [m for m in pred_mentions if normalize_term(m)]
        gold_mentions = [m for m in gold_mentions if normalize_term(m)]
        mention_pairs = align_mentions(pred_mentions, gold_mentions)
        unpaired += total - 2 * len(mention_pairs)
        for pred, gold in mention_pairs:
            if normalize_term(pred) == normalize_term(gold):
                cosine = 1.0
            else:
                cosine = cosine_similarity(await embedder.embed(pred), await embedder.embed(gold))
            scored.append(MatchPair(
                predicted_term=pair.predicted,
                gold_term=pair.gold,
                pred=pred,
                gold=gold,
                bleu=bleu(pred, [gold]),
                fuzzy=fuzzy_ratio(pred, gold),
                cosine=cosine,
            ))
    return scored, unpaired


def match_scores(records: Sequence, zero_fill_unpaired: bool = False) -> MatchScores:
    """
    Corpus means of BLEU, fuzzy ratio and cosine over every aligned mention pair.

    Args:
        records: Evaluation records carrying match_pairs and unpaired_mentions
        zero_fill_unpaired: Count each unpaired mention as a zero score

    Returns:
        MatchScores: Means and coverage; empty with None means when no pair exists
    """
    pairs = [pair for record in records for pair in record.match_pairs]
    unpaired = sum(record.unpaired_mentions for record in records)
    total = len(pairs) + unpaired
    coverage = _ratio(len(pairs), total)
    if not pairs:
        return MatchScores(pair_count=0, unpaired_count=unpaired, coverage=coverage, empty=True)

    denominator = total if zero_fill_unpaired else len(pairs)
    cosine = sum(p.cosine for p in pairs) / denominator
    if cosine < 0:
        logger.warning("Mean cosine similarity is negative (%.4f); embeddings are signed", cosine)
    return MatchScores(
        bleu=sum(p.bleu for p in pairs) / denominator,
        fuzzy=sum(p.fuzzy for p in pairs) / denominator,
        cosine=cosine,
        pair_count=len(pairs),
        unpaired_count=unpaired,
        coverage=coverage,
    )
