"""Numeric answer extraction and the shared normalization routine.

Filtering at data-generation time and exact-match scoring at evaluation
time both go through :func:`normalize_answer` / :func:`answers_match`, so
train-time and eval-time correctness agree by construction.
"""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation

ANSWER_MARKER = "The answer is"

_NUMBER_RE = re.compile(r"[-+]?[$£€]?\d[\d,]*(?:\.\d+)?")
_CURRENCY = "$£€"


def normalize_answer(raw: str) -> str:
    """Strip commas, currency symbols, a leading '+' and a trailing period."""
    s = raw.strip().replace(",", "")
    s = s.lstrip(_CURRENCY)
    if s.startswith("+"):
        s = s[1:].lstrip(_CURRENCY)
    if s.endswith("."):
        s = s[:-1]
    return s


def answers_match(a: str | None, b: str | None) -> bool:
    """Numeric equality of normalized answers; string equality as fallback."""
    if a is None or b is None:
        return False
    na, nb = normalize_answer(a), normalize_answer(b)
    try:
        return Decimal(na) == Decimal(nb)
    except InvalidOperation:
        return na == nb


def extract_answer(cot_text: str) -> str | None:
    """Pull the final numeric answer out of a chain-of-thought text.

    If the marker "the answer is" occurs (case-insensitive), the first
    number after its last occurrence wins; otherwise the last number in the
    text.  Returns None when no number is present.
    """
    idx = cot_text.lower().rfind(ANSWER_MARKER.lower())
    if idx >= 0:
        match = _NUMBER_RE.search(cot_text, idx + len(ANSWER_MARKER))
        if match:
            return normalize_answer(match.group())
    matches = _NUMBER_RE.findall(cot_text)
    if matches:
        return normalize_answer(matches[-1])
    return None


def split_cot_answer(completion_text: str) -> tuple[str, str | None]:
    """Split a completion into (chain text, extracted answer).

    The chain is everything before the last answer-marker occurrence,
    right-stripped; when no marker is present the whole completion is the
    chain.
    """
    answer = extract_answer(completion_text)
    idx = completion_text.lower().rfind(ANSWER_MARKER.lower())
    if idx >= 0:
        return completion_text[:idx].rstrip(), answer
    return completion_text, answer
