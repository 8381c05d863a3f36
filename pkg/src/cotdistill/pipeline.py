"""File-based pipeline stages: gen, filter, align, transfer, format, split.

Every stage reads and writes the documented JSONL formats, takes all its
randomness from named sub-seeds of one master seed, and is byte-reproducible
given identical inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import corpus
from .alignment import AlignmentResult, align
from .corpus import Question, Solution, subseed, training_text
from .teacher import TeacherClient
from .tokenizer import TokenSequence, Vocabulary, encode
from .transfer import audit_targets, build_targets, target_sequence_to_json


def run_gen(
    questions: list[Question],
    client: TeacherClient,
    out_path: str | Path,
    n: int = 40,
    max_tokens: int = 256,
    temperature: float = 0.7,
    top_logprobs: int = 5,
) -> int:
    """Sample ``n`` solutions per question, appending to the output as each
    question completes so earlier work survives an endpoint failure."""
    written = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for q in questions:
            solutions = corpus.sample_solutions(
                q, client, n=n, max_tokens=max_tokens,
                temperature=temperature, top_logprobs=top_logprobs,
            )
            for s in solutions:
                fh.write(json.dumps(corpus.solution_to_dict(s), ensure_ascii=False) + "\n")
                written += 1
            fh.flush()
    return written


def run_filter(solutions_in: str | Path, solutions_out: str | Path) -> tuple[int, int]:
    """Keep correct solutions; returns (kept, total)."""
    total = 0
    kept = 0
    with open(solutions_out, "w", encoding="utf-8") as fh:
        for s in corpus.read_solutions_jsonl(solutions_in):
            total += 1
            if s.correct:
                fh.write(json.dumps(corpus.solution_to_dict(s), ensure_ascii=False) + "\n")
                kept += 1
    return kept, total


def solution_sequences(
    s: Solution,
    teacher_vocab: Vocabulary,
    student_vocab: Vocabulary,
) -> tuple[TokenSequence, TokenSequence]:
    """Teacher and student tokenizations of a solution's training text.

    The teacher side is rebuilt from the recorded step surfaces; the student
    side is a fresh encoding.  Both must spell the same text or align()
    raises TextMismatch.
    """
    if not s.teacher_steps:
        raise ValueError(f"solution {s.question_id}/{s.sample_index} has no teacher steps")
    teacher_seq = TokenSequence.from_surfaces(
        [st.chosen_surface for st in s.teacher_steps],
        marker=teacher_vocab.marker,
        tokenizer_id=teacher_vocab.name,
    )
    student_seq = encode(training_text(s), student_vocab)
    return teacher_seq, student_seq


def alignment_record(s: Solution, result: AlignmentResult) -> dict:
    return {
        "question_id": s.question_id,
        "sample_index": s.sample_index,
        "pairs": [[p.teacher_index, p.student_index, p.pair_cost] for p in result.pairs],
        "total_cost": result.total_cost,
        "link_kinds": [k.value for k in result.student_link_kinds],
    }


def run_align(solutions_in: str | Path, teacher_vocab: Vocabulary,
              student_vocab: Vocabulary, out_path: str | Path) -> int:
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for s in corpus.read_solutions_jsonl(solutions_in):
            teacher_seq, student_seq = solution_sequences(s, teacher_vocab, student_vocab)
            result = align(teacher_seq, student_seq)
            fh.write(json.dumps(alignment_record(s, result), ensure_ascii=False) + "\n")
            count += 1
    return count


@dataclass
class TransferStats:
    sequences: int = 0
    transferred: int = 0
    one_hot: int = 0
    gold_forced: int = 0
    mass_total: float = 0.0
    steps: int = 0

    @property
    def mean_mass(self) -> float:
        return self.mass_total / self.steps if self.steps else 0.0


def run_transfer(solutions_in: str | Path, teacher_vocab: Vocabulary,
                 student_vocab: Vocabulary, out_path: str | Path,
                 renormalize: bool = False) -> TransferStats:
    """Build per-student-token targets for every step-carrying solution."""
    stats = TransferStats()
    with open(out_path, "w", encoding="utf-8") as fh:
        for s in corpus.read_solutions_jsonl(solutions_in):
            teacher_seq, student_seq = solution_sequences(s, teacher_vocab, student_vocab)
            result = align(teacher_seq, student_seq)
            seq = build_targets(
                result, list(s.teacher_steps), student_seq, student_vocab,
                teacher_marker=teacher_vocab.marker,
                question_id=f"{s.question_id}#{s.sample_index}",
                renormalize=renormalize,
            )
            fh.write(target_sequence_to_json(seq, list(student_seq.ids)) + "\n")
            audit = audit_targets(seq)
            stats.sequences += 1
            stats.transferred += audit.transferred
            stats.one_hot += audit.one_hot
            stats.gold_forced += audit.gold_forced
            stats.mass_total += audit.mean_mass * len(seq)
            stats.steps += len(seq)
    return stats


def run_format(
    questions: list[Question],
    solutions_in: str | Path,
    out_path: str | Path,
    ratio: dict[str, int],
    k: int = 4,
    seed: int = 0,
) -> dict[str, int]:
    """Render every solution in each positive-weight format, then interleave.

    Exemplars for the in-context formats are each question's first solution
    in the file, pooled across all questions except the target.
    """
    questions_by_id = {q.id: q for q in questions}
    solutions = list(corpus.read_solutions_jsonl(solutions_in))
    pool: dict[str, tuple[Question, Solution]] = {}
    for s in solutions:
        if s.question_id in questions_by_id and s.question_id not in pool:
            pool[s.question_id] = (questions_by_id[s.question_id], s)

    ratio = {corpus.resolve_format_tag(t): w for t, w in ratio.items()}
    active = [t for t, w in ratio.items() if w > 0]
    per_format: dict[str, list[corpus.FormattedInstance]] = {t: [] for t in active}
    for s in solutions:
        q = questions_by_id.get(s.question_id)
        if q is None:
            raise ValueError(f"solution references unknown question {s.question_id!r}")
        for tag in active:
            exemplars = ()
            if tag in (corpus.B1, corpus.B2):
                exemplars = corpus.default_exemplars(q, pool, k=k)
            per_format[tag].append(corpus.format_instance(q, s, tag, exemplars, k=k))

    mixed = corpus.mix_formats(per_format, ratio, seed=subseed(seed, "mix"))
    corpus.write_instances_jsonl(out_path, mixed)
    return {t: len(per_format[t]) for t in active}


def run_split(dataset_in: str | Path, dev_out: str | Path, test_out: str | Path,
              dev_size: int = 500, seed: int = 0) -> tuple[int, int]:
    """Split any JSONL file line-wise into seed-deterministic dev/test parts."""
    with open(dataset_in, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    dev, test = corpus.split_dev(lines, dev_size=dev_size, seed=subseed(seed, "split"))
    Path(dev_out).write_text("".join(dev), encoding="utf-8")
    Path(test_out).write_text("".join(test), encoding="utf-8")
    return len(dev), len(test)
