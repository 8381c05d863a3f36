"""Deterministic greedy longest-match tokenizers.

A :class:`Vocabulary` maps integer ids to surface strings.  Surfaces may
carry a word-boundary marker prefix (the "Ġ" convention of GPT-style
vocabularies, the "▁" convention of sentencepiece ones); before any
matching or comparison the marker is rendered back to a single leading
space by :func:`normalize_surface`.  Two built-in demo vocabularies -- a
coarse "teacher-like" one and a fine "student-like" one -- cover the same
character set, so any text encodable with one is encodable with the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

GPT_MARKER = "Ġ"  # Ġ
SP_MARKER = "▁"  # ▁


class UncoverableCharacterError(ValueError):
    """A character of the input matches no vocabulary entry."""

    def __init__(self, char: str, position: int):
        self.char = char
        self.position = position
        super().__init__(
            f"character {char!r} at position {position} matches no vocabulary "
            f"entry (char fallback disabled)"
        )


def normalize_surface(surface: str, marker: str | None) -> str:
    """Render a marker prefix back to a single leading space.

    Only a leading marker is touched; every other character is returned
    unchanged.  With ``marker=None`` the surface is already in space
    convention and passes through.
    """
    if marker and surface.startswith(marker):
        return " " + surface[len(marker):]
    return surface


@dataclass(frozen=True)
class Vocabulary:
    """Ordered (surface, id) table; ids are positions, contiguous from 0."""

    surfaces: tuple[str, ...]
    marker: str | None = None
    name: str = "vocab"

    def __post_init__(self):
        if len(set(self.surfaces)) != len(self.surfaces):
            raise ValueError(f"vocabulary {self.name!r} has duplicate surfaces")
        if any(not s for s in self.surfaces):
            raise ValueError(f"vocabulary {self.name!r} has an empty surface")

    def __len__(self) -> int:
        return len(self.surfaces)

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def id_of(self, surface: str) -> int | None:
        return self._raw_index.get(surface)

    def id_of_normalized(self, normalized: str) -> int | None:
        """Id of the entry whose normalized surface equals ``normalized``."""
        return self._match_table.get(normalized)

    @cached_property
    def _raw_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.surfaces)}

    @cached_property
    def _match_table(self) -> dict[str, int]:
        # Lowest id wins if two raw surfaces normalize identically.
        table: dict[str, int] = {}
        for i, s in enumerate(self.surfaces):
            table.setdefault(normalize_surface(s, self.marker), i)
        return table

    @cached_property
    def _max_match_len(self) -> int:
        return max(len(k) for k in self._match_table)

    def save(self, path: str | Path) -> None:
        """Write ``#marker=<string>`` header plus ``<id>\\t<surface>`` lines."""
        lines = [f"#marker={self.marker or ''}"]
        lines += [f"{i}\t{s}" for i, s in enumerate(self.surfaces)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, name: str | None = None) -> "Vocabulary":
        raw = Path(path).read_text(encoding="utf-8").splitlines()
        marker: str | None = None
        entries: list[tuple[int, str]] = []
        for lineno, line in enumerate(raw, start=1):
            if not line:
                continue
            if line.startswith("#marker="):
                marker = line[len("#marker="):] or None
                continue
            try:
                id_str, surface = line.split("\t", 1)
                entries.append((int(id_str), surface))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed vocab line {line!r}") from exc
        entries.sort(key=lambda e: e[0])
        ids = [i for i, _ in entries]
        if ids != list(range(len(ids))):
            raise ValueError(f"{path}: ids not contiguous from 0")
        return cls(
            surfaces=tuple(s for _, s in entries),
            marker=marker,
            name=name or Path(path).stem,
        )


@dataclass(frozen=True)
class Token:
    surface: str
    id: int


@dataclass(frozen=True)
class TokenSequence:
    """One tokenizer's segmentation of a text."""

    tokens: tuple[Token, ...]
    tokenizer_id: str
    marker: str | None = field(default=None)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.tokens)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.tokens)

    @property
    def normalized_surfaces(self) -> tuple[str, ...]:
        return tuple(normalize_surface(t.surface, self.marker) for t in self.tokens)

    @classmethod
    def from_surfaces(
        cls,
        surfaces: list[str] | tuple[str, ...],
        marker: str | None = None,
        tokenizer_id: str = "adhoc",
    ) -> "TokenSequence":
        """Build a sequence from bare surfaces, with positional ids.

        Used for sequences that do not come out of a vocabulary (e.g. the
        token strings returned by a completion endpoint).
        """
        return cls(
            tokens=tuple(Token(surface=s, id=i) for i, s in enumerate(surfaces)),
            tokenizer_id=tokenizer_id,
            marker=marker,
        )


def encode(text: str, vocab: Vocabulary, char_fallback: bool = False) -> TokenSequence:
    """Greedy longest-match segmentation of ``text`` under ``vocab``.

    At each position the longest vocabulary surface whose *normalized* form
    matches the remaining text is consumed.  A position no entry matches
    raises :class:`UncoverableCharacterError`, unless ``char_fallback`` is
    set, in which case the offending character becomes an implicit
    single-character entry appended after the vocabulary tail (ids assigned
    in order of first appearance).
    """
    table = vocab._match_table
    max_len = vocab._max_match_len if vocab.surfaces else 0
    fallback_ids: dict[str, int] = {}
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        matched = False
        for length in range(min(max_len, len(text) - pos), 0, -1):
            piece = text[pos:pos + length]
            token_id = table.get(piece)
            if token_id is not None:
                tokens.append(Token(surface=vocab.surfaces[token_id], id=token_id))
                pos += length
                matched = True
                break
        if not matched:
            char = text[pos]
            if not char_fallback:
                raise UncoverableCharacterError(char, pos)
            if char not in fallback_ids:
                fallback_ids[char] = len(vocab) + len(fallback_ids)
            tokens.append(Token(surface=char, id=fallback_ids[char]))
            pos += 1
    return TokenSequence(tokens=tuple(tokens), tokenizer_id=vocab.name, marker=vocab.marker)


def decode(seq: TokenSequence) -> str:
    """Concatenate surfaces, rendering marker prefixes back to spaces."""
    return "".join(normalize_surface(t.surface, seq.marker) for t in seq.tokens)


# ---------------------------------------------------------------------------
# Built-in demo vocabularies.
#
# Both cover exactly the same character set (ascii letters, digits, space and
# common punctuation), so every text encodable under one is encodable under
# the other and the two segmentations normalize to the same string.  The
# teacher vocabulary is coarse: whole words and two-digit numbers are single
# tokens.  The student vocabulary is fine: short pieces only.
# ---------------------------------------------------------------------------

_CHARS = (
    [chr(c) for c in range(ord("a"), ord("z") + 1)]
    + [chr(c) for c in range(ord("A"), ord("Z") + 1)]
    + [str(d) for d in range(10)]
    + list(".,+-*/=?!':;$%()")
)

_COMMON_WORDS = [
    "the", "answer", "is", "and", "has", "have", "how", "many", "does",
    "fruits", "objects", "items", "in", "total", "left", "now",
    "apples", "bananas", "pears", "plums", "figs", "cherries",
    "marbles", "pebbles", "shells", "coins", "cards", "books",
]

_BARE_WORDS = [
    "Question", "Answer", "The", "How",
    "Ali", "Ben", "Cara", "Dan", "Eve", "Fay", "Gus", "Hana", "Ivy", "Jon",
]

_STUDENT_MERGES = [
    "th", "he", "an", "er", "in", "es", "on", "at", "en", "nd", "ti", "is",
    "ar", "te", "ed", "ng", "al", "it", "as", "se", "ha", "sw", "we", "ow",
    "ns", "to", "ot", "le", "ve", "ll", "ay", "ur", "ri", "ce", "ld", "bl",
    "co", "ok", "pl", "rb", "sh", "ds", "Qu", "Th", "Ho", "An",
    "the", "and", "ans", "wer", "ing", "ion", "est", "her", "swe",
]


def demo_teacher_vocab() -> Vocabulary:
    """Coarse GPT-style demo vocabulary (marker "Ġ")."""
    surfaces: list[str] = list(_CHARS) + [GPT_MARKER]
    surfaces += [GPT_MARKER + c for c in _CHARS if c != " "]
    surfaces += [w for w in _COMMON_WORDS]
    surfaces += [GPT_MARKER + w for w in _COMMON_WORDS]
    surfaces += _BARE_WORDS
    surfaces += [GPT_MARKER + w for w in _BARE_WORDS]
    surfaces += [f"{a}{b}" for a in range(1, 10) for b in range(10)]  # 10..99
    surfaces += [GPT_MARKER + f"{a}{b}" for a in range(1, 10) for b in range(10)]
    return Vocabulary(surfaces=tuple(surfaces), marker=GPT_MARKER, name="demo-teacher")


def demo_student_vocab() -> Vocabulary:
    """Fine sentencepiece-style demo vocabulary (marker "▁")."""
    surfaces: list[str] = list(_CHARS) + [SP_MARKER]
    surfaces += [SP_MARKER + c for c in _CHARS if c != " "]
    surfaces += _STUDENT_MERGES
    # Whole-word forms shared with the teacher for a few frequent words, so
    # mixed alignments contain genuine one-to-one links.
    for w in ["the", "is", "and", "has", "in"]:
        surfaces.append(SP_MARKER + w)
    return Vocabulary(surfaces=tuple(surfaces), marker=SP_MARKER, name="demo-student")


_DEMO_FACTORIES = {
    "demo-teacher": demo_teacher_vocab,
    "demo-student": demo_student_vocab,
}


def resolve_vocab(spec: str | Path) -> Vocabulary:
    """Resolve a built-in demo name or a vocabulary file path."""
    if str(spec) in _DEMO_FACTORIES:
        return _DEMO_FACTORIES[str(spec)]()
    return Vocabulary.load(spec)
