"""Monotone many-to-many alignment between two tokenizations of one text.

The alignment minimizes the summed token-pair cost over all monotone paths
through the (teacher x student) grid, where every path cell (i, j) --
reached diagonally or not -- charges the pair cost c(s_i, t_j).  This is
deliberately different from classical edit distance with gap penalties:
"skip" moves still pay the cost of the pair they land on, so every token on
both sides ends up covered by at least one pair.

Costs are computed on normalized surfaces (marker prefixes rendered to
spaces), never on raw marker characters.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable

from .tokenizer import TokenSequence

CostFunction = Callable[[str, str], float]


class TextMismatchError(ValueError):
    """The two sequences do not spell the same normalized text."""


class EmptySequenceError(ValueError):
    """Alignment requires both sequences to be non-empty."""


class LinkKind(str, Enum):
    ONE_TO_ONE = "one_to_one"
    ONE_TO_MANY = "one_to_many"  # one teacher token, several student tokens
    MANY_TO_ONE = "many_to_one"  # several teacher tokens, one student token


def levenshtein(a: str, b: str) -> int:
    """Plain edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@lru_cache(maxsize=1 << 16)
def normalized_edit_cost(a: str, b: str) -> float:
    """Levenshtein(a, b) / max(|a|, |b|); zero when both strings are empty.

    Symmetric, zero iff equal, bounded in [0, 1].  Token surfaces repeat
    heavily across a corpus, hence the cache.
    """
    if not a and not b:
        return 0.0
    return levenshtein(a, b) / max(len(a), len(b))


@dataclass(frozen=True)
class AlignmentPair:
    """One aligned cell of the backtrace path (1-based indices)."""

    teacher_index: int
    student_index: int
    pair_cost: float


@dataclass(frozen=True)
class AlignmentResult:
    pairs: tuple[AlignmentPair, ...]
    total_cost: float
    student_link_kinds: tuple[LinkKind, ...]

    def link_kind(self, student_index: int) -> LinkKind:
        return self.student_link_kinds[student_index - 1]

    def teacher_partner(self, student_index: int) -> int:
        """Teacher index paired with a one-to-one student token."""
        for p in self.pairs:
            if p.student_index == student_index:
                return p.teacher_index
        raise IndexError(f"student index {student_index} not covered")


def alignment_matrix(
    teacher: TokenSequence,
    student: TokenSequence,
    cost: CostFunction = normalized_edit_cost,
) -> list[list[float]]:
    """The LxN grid of minimal prefix-alignment costs.

    Cell (i, j) (0-based here, 1-based in the recursion) holds the minimal
    cost of aligning the first i+1 teacher tokens with the first j+1 student
    tokens.
    """
    s = teacher.normalized_surfaces
    t = student.normalized_surfaces
    L, N = len(s), len(t)
    inf = float("inf")
    f = [[inf] * N for _ in range(L)]
    for i in range(L):
        for j in range(N):
            c = cost(s[i], t[j])
            if i == 0 and j == 0:
                f[i][j] = c
            else:
                up = f[i - 1][j] if i > 0 else inf
                left = f[i][j - 1] if j > 0 else inf
                diag = f[i - 1][j - 1] if i > 0 and j > 0 else inf
                f[i][j] = min(up, left, diag) + c
    return f


def align(
    teacher: TokenSequence,
    student: TokenSequence,
    cost: CostFunction = normalized_edit_cost,
) -> AlignmentResult:
    """Minimal-cost monotone full-coverage alignment of two tokenizations.

    Both sequences must be non-empty and must normalize to the same text.
    The backtrace is deterministic: among equally cheap predecessors it
    prefers the diagonal move, then the teacher-advance (vertical) move,
    then the student-advance (horizontal) move; the diagonal preference
    maximizes the number of one-to-one links.
    """
    if len(teacher) == 0 or len(student) == 0:
        raise EmptySequenceError("cannot align an empty token sequence")
    teacher_text = "".join(teacher.normalized_surfaces)
    student_text = "".join(student.normalized_surfaces)
    if teacher_text != student_text:
        raise TextMismatchError(
            f"sequences spell different texts: {teacher_text!r} != {student_text!r}"
        )

    s = teacher.normalized_surfaces
    t = student.normalized_surfaces
    L, N = len(s), len(t)
    f = alignment_matrix(teacher, student, cost)

    pairs: list[AlignmentPair] = []
    i, j = L - 1, N - 1
    inf = float("inf")
    while True:
        pairs.append(AlignmentPair(i + 1, j + 1, cost(s[i], t[j])))
        if i == 0 and j == 0:
            break
        diag = f[i - 1][j - 1] if i > 0 and j > 0 else inf
        up = f[i - 1][j] if i > 0 else inf
        left = f[i][j - 1] if j > 0 else inf
        best = min(diag, up, left)
        if diag == best:
            i, j = i - 1, j - 1
        elif up == best:
            i = i - 1
        else:
            j = j - 1
    pairs.reverse()

    result_pairs = tuple(pairs)
    return AlignmentResult(
        pairs=result_pairs,
        total_cost=f[L - 1][N - 1],
        student_link_kinds=classify_links(result_pairs, num_students=N),
    )


def classify_links(
    pairs: "AlignmentResult | tuple[AlignmentPair, ...] | list[AlignmentPair]",
    num_students: int | None = None,
) -> tuple[LinkKind, ...]:
    """Per-student-token link classification.

    Student token j is one-to-one iff it appears in exactly one pair (i, j)
    and that teacher token i also appears in exactly one pair.  A student
    token appearing in several pairs absorbs several teacher tokens
    (many-to-one); a student token whose single teacher partner is shared
    with other student tokens is part of a one-to-many fan-out.
    """
    if isinstance(pairs, AlignmentResult):
        pairs = pairs.pairs
    teacher_counts: dict[int, int] = {}
    student_pairs: dict[int, list[int]] = {}
    for p in pairs:
        teacher_counts[p.teacher_index] = teacher_counts.get(p.teacher_index, 0) + 1
        student_pairs.setdefault(p.student_index, []).append(p.teacher_index)
    n = num_students if num_students is not None else max(student_pairs)
    kinds: list[LinkKind] = []
    for j in range(1, n + 1):
        partners = student_pairs.get(j, [])
        if len(partners) > 1:
            kinds.append(LinkKind.MANY_TO_ONE)
        elif len(partners) == 1 and teacher_counts[partners[0]] == 1:
            kinds.append(LinkKind.ONE_TO_ONE)
        else:
            kinds.append(LinkKind.ONE_TO_MANY)
    return tuple(kinds)
