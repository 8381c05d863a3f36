"""Per-student-token target distributions from teacher top-5 records.

A student token with a one-to-one alignment link reuses the teacher's top-5
probabilities, mapped into the student vocabulary by normalized surface;
everything else falls back to a one-hot target on the gold token.  Kept
probabilities are used as they come -- mass outside the top 5 is treated as
zero, not renormalized away -- so targets are generally subnormalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .alignment import AlignmentResult, LinkKind
from .tokenizer import TokenSequence, Vocabulary, normalize_surface

PROB_SUM_TOLERANCE = 1e-6


class LengthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TeacherStep:
    """One decoding step of the teacher: emitted token plus its top-5."""

    chosen_surface: str
    top_k: dict[str, float]

    def __post_init__(self):
        if len(self.top_k) > 5:
            raise ValueError(f"top_k carries {len(self.top_k)} entries, max is 5")
        if any(not (0.0 < p <= 1.0) for p in self.top_k.values()):
            raise ValueError("top_k probabilities must lie in (0, 1]")
        if sum(self.top_k.values()) > 1.0 + PROB_SUM_TOLERANCE:
            raise ValueError("top_k probabilities sum above 1")

    @property
    def degenerate(self) -> bool:
        """The sampled token escaped its own top-5 (possible at high temperature)."""
        return self.chosen_surface not in self.top_k


@dataclass(frozen=True)
class StudentTarget:
    """Target distribution for one student token.

    ``entries`` maps student-vocabulary ids to probabilities; ids absent
    from it carry probability exactly zero.
    """

    kind: str  # "transferred" | "one_hot"
    entries: dict[int, float]
    gold_forced: bool = field(default=False)

    def __post_init__(self):
        if self.kind not in ("transferred", "one_hot"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "one_hot":
            if len(self.entries) != 1 or next(iter(self.entries.values())) != 1.0:
                raise ValueError("one_hot target must hold exactly one entry at 1.0")
        else:
            if not self.entries:
                raise ValueError("transferred target must be non-empty")
            if sum(self.entries.values()) > 1.0 + PROB_SUM_TOLERANCE:
                raise ValueError("transferred probabilities sum above 1")

    @property
    def mass(self) -> float:
        return sum(self.entries.values())


def one_hot(token_id: int) -> StudentTarget:
    return StudentTarget(kind="one_hot", entries={token_id: 1.0})


@dataclass(frozen=True)
class TargetSequence:
    question_id: str
    targets: tuple[StudentTarget, ...]

    def __len__(self) -> int:
        return len(self.targets)


def build_targets(
    alignment: AlignmentResult,
    teacher_steps: list[TeacherStep] | tuple[TeacherStep, ...],
    student: TokenSequence,
    student_vocab: Vocabulary,
    teacher_marker: str | None = None,
    question_id: str = "",
    renormalize: bool = False,
) -> TargetSequence:
    """One target per student token, transferred where the link allows it.

    For a one-to-one link with teacher step i, each top-5 surface is mapped
    through normalization into the student vocabulary; unmappable surfaces
    are dropped without renormalizing the rest (set ``renormalize`` to
    rescale kept mass to 1 for sensitivity checks).  The gold student token
    is forced into the support: if it is missing after mapping, it receives
    the teacher's chosen-token probability (whose mapped entry, if any, is
    released to it); with no chosen-token probability available the step
    falls back to one-hot.  Non-one-to-one links and degenerate teacher
    steps are always one-hot on the gold token.
    """
    num_teacher = max(p.teacher_index for p in alignment.pairs)
    if len(teacher_steps) != num_teacher:
        raise LengthMismatchError(
            f"{len(teacher_steps)} teacher steps for {num_teacher} aligned teacher tokens"
        )
    num_student = max(p.student_index for p in alignment.pairs)
    if len(student) != num_student:
        raise LengthMismatchError(
            f"student sequence has {len(student)} tokens, alignment covers {num_student}"
        )

    targets: list[StudentTarget] = []
    for j, token in enumerate(student.tokens, start=1):
        if alignment.link_kind(j) is not LinkKind.ONE_TO_ONE:
            targets.append(one_hot(token.id))
            continue
        step = teacher_steps[alignment.teacher_partner(j) - 1]
        if step.degenerate:
            targets.append(one_hot(token.id))
            continue
        targets.append(
            _transfer_step(step, gold_id=token.id, student_vocab=student_vocab,
                           teacher_marker=teacher_marker, renormalize=renormalize)
        )
    return TargetSequence(question_id=question_id, targets=tuple(targets))


def _transfer_step(
    step: TeacherStep,
    gold_id: int,
    student_vocab: Vocabulary,
    teacher_marker: str | None,
    renormalize: bool,
) -> StudentTarget:
    entries: dict[int, float] = {}
    chosen_mapped: int | None = None
    for surface, prob in step.top_k.items():
        mapped = student_vocab.id_of_normalized(normalize_surface(surface, teacher_marker))
        if mapped is None:
            continue
        if surface == step.chosen_surface:
            chosen_mapped = mapped
        entries.setdefault(mapped, prob)

    gold_forced = False
    if gold_id not in entries:
        chosen_prob = step.top_k.get(step.chosen_surface)
        if chosen_prob is None:
            return one_hot(gold_id)
        # Move the chosen token's mass onto the gold student token; the sum
        # never exceeds the original top-5 sum.
        if chosen_mapped is not None and entries.get(chosen_mapped) == chosen_prob:
            del entries[chosen_mapped]
        entries[gold_id] = chosen_prob
        gold_forced = True

    if renormalize:
        total = sum(entries.values())
        entries = {i: p / total for i, p in entries.items()}
    return StudentTarget(kind="transferred", entries=entries, gold_forced=gold_forced)


@dataclass(frozen=True)
class TargetAudit:
    transferred: int
    one_hot: int
    mean_mass: float
    gold_forced: int

    def as_dict(self) -> dict:
        return {
            "transferred": self.transferred,
            "one_hot": self.one_hot,
            "mean_mass": self.mean_mass,
            "gold_forced": self.gold_forced,
        }


def audit_targets(seq: TargetSequence) -> TargetAudit:
    """Tally transferred vs one-hot steps, kept mass, and gold insertions."""
    transferred = sum(1 for t in seq.targets if t.kind == "transferred")
    n_one_hot = len(seq.targets) - transferred
    masses = [t.mass for t in seq.targets]
    mean_mass = sum(masses) / len(masses) if masses else 0.0
    forced = sum(1 for t in seq.targets if t.gold_forced)
    return TargetAudit(transferred=transferred, one_hot=n_one_hot,
                       mean_mass=mean_mass, gold_forced=forced)


# --- JSONL serialization ----------------------------------------------------
# One line per example:
#   {"question_id": ..., "student_ids": [...],
#    "targets": [{"kind": ..., "entries": {"<id>": prob, ...}}, ...]}
# json emits floats at full repr precision (>= 9 significant digits).


def target_sequence_to_json(seq: TargetSequence, student_ids: Iterable[int]) -> str:
    record = {
        "question_id": seq.question_id,
        "student_ids": list(student_ids),
        "targets": [
            {"kind": t.kind, "entries": {str(i): p for i, p in sorted(t.entries.items())}}
            for t in seq.targets
        ],
    }
    return json.dumps(record, ensure_ascii=False)


def target_sequence_from_json(line: str) -> tuple[TargetSequence, list[int]]:
    record = json.loads(line)
    targets = tuple(
        StudentTarget(kind=t["kind"], entries={int(i): p for i, p in t["entries"].items()})
        for t in record["targets"]
    )
    seq = TargetSequence(question_id=record["question_id"], targets=targets)
    return seq, list(record["student_ids"])


def write_target_jsonl(path: str | Path,
                       records: Iterable[tuple[TargetSequence, list[int]]]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for seq, ids in records:
            fh.write(target_sequence_to_json(seq, ids) + "\n")
            count += 1
    return count


def read_target_jsonl(path: str | Path) -> Iterator[tuple[TargetSequence, list[int]]]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield target_sequence_from_json(line)
