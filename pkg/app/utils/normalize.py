import unicodedata

# Characters trimmed from both ends of a term
EDGE_PUNCTUATION = " .,:;\"'()[]"


def normalize_term(s: str) -> str:
    """
    Canonical form of a term or mention used for every equality test.

    Lowercases, applies Unicode NFC, collapses whitespace runs to one space and
    strips leading/trailing punctuation. Idempotent.

    Args:
        s: Raw term text

    Returns:
        str: The normalized term
    """
    s = unicodedata.normalize("NFC", unicodedata.normalize("NFC", s).lower())
    s = " ".join(s.split())
    s = s.strip(EDGE_PUNCTUATION)
    return " ".join(s.split())
