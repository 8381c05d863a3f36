"""Specialization dataset generation and curation.

Samples chain-of-thought solutions from a teacher client, keeps the ones
whose extracted answer matches the gold answer, and renders four tuning
formats: in-context answer-only (B1), in-context chain-of-thought (B2),
zero-shot answer-only (B3), and zero-shot chain-of-thought (B4).
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .answers import ANSWER_MARKER, answers_match, normalize_answer, split_cot_answer
from .teacher import TeacherClient
from .transfer import TargetSequence, TeacherStep

TEMPLATE_VERSION = "v1"

B1 = "B1_incontext_answer_only"
B2 = "B2_incontext_cot"
B3 = "B3_zeroshot_answer_only"
B4 = "B4_zeroshot_cot"
FORMAT_TAGS = (B1, B2, B3, B4)

_TAG_ALIASES = {"B1": B1, "B2": B2, "B3": B3, "B4": B4}


class InsufficientExemplarsError(ValueError):
    pass


class TooSmallError(ValueError):
    pass


def resolve_format_tag(tag: str) -> str:
    full = _TAG_ALIASES.get(tag.upper(), tag)
    if full not in FORMAT_TAGS:
        raise ValueError(f"unknown format tag {tag!r}")
    return full


def subseed(seed: int, name: str) -> int:
    """Named fan-out of a master seed; stable across runs and platforms."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answer: str

    def __post_init__(self):
        try:
            Decimal(normalize_answer(self.gold_answer))
        except InvalidOperation as exc:
            raise ValueError(f"gold answer {self.gold_answer!r} is not numeric") from exc


@dataclass(frozen=True)
class Solution:
    question_id: str
    sample_index: int
    cot_text: str  # chain only; the answer sentence is reconstructed on demand
    extracted_answer: str | None
    correct: bool
    teacher_steps: tuple[TeacherStep, ...] | None = field(default=None)


def training_text(solution: Solution) -> str:
    """The text the student trains on: chain plus canonical answer sentence."""
    if solution.extracted_answer is None:
        return solution.cot_text
    return f"{solution.cot_text} {ANSWER_MARKER} {solution.extracted_answer}"


@dataclass(frozen=True)
class FormattedInstance:
    format_tag: str
    input_text: str
    output_text: str
    question_id: str
    target_seq: TargetSequence | None = field(default=None)


def build_sampling_prompt(q: Question) -> str:
    return f"Question: {q.text}\nAnswer:"


def sample_solutions(
    q: Question,
    client: TeacherClient,
    n: int = 40,
    max_tokens: int = 256,
    temperature: float = 0.7,
    top_logprobs: int = 5,
) -> list[Solution]:
    """Draw ``n`` teacher solutions and score their answers against gold."""
    if n < 1:
        raise ValueError("n must be >= 1")
    completions = client.complete(build_sampling_prompt(q), n, max_tokens=max_tokens,
                                  temperature=temperature, top_logprobs=top_logprobs)
    solutions = []
    for idx, completion in enumerate(completions):
        chain, answer = split_cot_answer(completion.text)
        solutions.append(Solution(
            question_id=q.id,
            sample_index=idx,
            cot_text=chain,
            extracted_answer=answer,
            correct=answers_match(answer, q.gold_answer),
            teacher_steps=completion.steps or None,
        ))
    return solutions


def filter_correct(solutions: Iterable[Solution]) -> list[Solution]:
    return [s for s in solutions if s.correct]


# --- formatting -------------------------------------------------------------


def _exemplar_block(q: Question, s: Solution, with_cot: bool) -> str:
    answer = s.extracted_answer if s.extracted_answer is not None else ""
    if with_cot:
        return f"Question: {q.text}\nAnswer: {s.cot_text} {ANSWER_MARKER} {answer}\n\n"
    return f"Question: {q.text}\nAnswer: {answer}\n\n"


def format_instance(
    q: Question,
    s: Solution,
    tag: str,
    exemplars: Sequence[tuple[Question, Solution]] = (),
    k: int = 4,
    target_seq: TargetSequence | None = None,
) -> FormattedInstance:
    """Render one tuning example in the requested format.

    B1/B2 prepend exactly ``k`` worked exemplars (answer-only for B1, chain
    plus answer for B2); B3/B4 use the bare question as input.  Outputs are
    answer-only for B1/B3 and chain-then-answer for B2/B4.
    """
    tag = resolve_format_tag(tag)
    answer = s.extracted_answer if s.extracted_answer is not None else ""
    cot_output = f"{s.cot_text} {ANSWER_MARKER} {answer}"

    if tag in (B3, B4):
        output = answer if tag == B3 else cot_output
        return FormattedInstance(tag, q.text, output, q.id, target_seq)

    if len(exemplars) < k:
        raise InsufficientExemplarsError(f"need {k} exemplars, got {len(exemplars)}")
    chosen = list(exemplars[:k])
    if any(eq.id == q.id for eq, _ in chosen):
        raise InsufficientExemplarsError(f"question {q.id} cannot be its own exemplar")
    blocks = "".join(_exemplar_block(eq, es, with_cot=(tag == B2)) for eq, es in chosen)
    input_text = blocks + f"Question: {q.text}\nAnswer:"
    output = answer if tag == B1 else cot_output
    return FormattedInstance(tag, input_text, output, q.id, target_seq)


def default_exemplars(
    target: Question,
    pool: dict[str, tuple[Question, Solution]],
    k: int = 4,
) -> list[tuple[Question, Solution]]:
    """The k lexically-smallest question ids in the pool, excluding the target."""
    ids = sorted(i for i in pool if i != target.id)
    if len(ids) < k:
        raise InsufficientExemplarsError(
            f"pool has {len(ids)} usable exemplars for {target.id}, need {k}"
        )
    return [pool[i] for i in ids[:k]]


def mix_formats(
    per_format: dict[str, list[FormattedInstance]],
    ratio: dict[str, int],
    seed: int = 0,
) -> list[FormattedInstance]:
    """Seeded weighted interleave of per-format instance lists.

    Uses smooth weighted round-robin, so any window of ``sum(weights)``
    consecutive outputs holds each live format its weight's worth of times
    (within one instance).  Instance order within a format is a seeded
    shuffle.  Zero-weight formats are excluded.
    """
    ratio = {resolve_format_tag(t): w for t, w in ratio.items()}
    if any(w < 0 for w in ratio.values()):
        raise ValueError("weights must be non-negative")
    if not any(w > 0 for w in ratio.values()):
        raise ValueError("at least one weight must be positive")

    queues: dict[str, deque[FormattedInstance]] = {}
    for tag, weight in ratio.items():
        items = list(per_format.get(tag, ()))
        if weight > 0 and items:
            random.Random(subseed(seed, f"mix:{tag}")).shuffle(items)
            queues[tag] = deque(items)

    credit = {tag: 0 for tag in queues}
    out: list[FormattedInstance] = []
    while queues:
        total = sum(ratio[t] for t in queues)
        for tag in queues:
            credit[tag] += ratio[tag]
        pick = max(sorted(queues), key=lambda t: credit[t])
        credit[pick] -= total
        out.append(queues[pick].popleft())
        if not queues[pick]:
            del queues[pick]
            del credit[pick]
    return out


def split_dev(
    dataset: Sequence,
    dev_size: int = 500,
    seed: int = 0,
) -> tuple[list, list]:
    """Disjoint seed-deterministic (dev, test) split preserving input order."""
    if len(dataset) <= dev_size:
        raise TooSmallError(f"dataset of {len(dataset)} cannot spare {dev_size} dev items")
    rng = random.Random(seed)
    dev_idx = set(rng.sample(range(len(dataset)), dev_size))
    dev = [item for i, item in enumerate(dataset) if i in dev_idx]
    test = [item for i, item in enumerate(dataset) if i not in dev_idx]
    return dev, test


# --- mock question synthesis ------------------------------------------------

_NAMES = ["Ali", "Ben", "Cara", "Dan", "Eve", "Fay", "Gus", "Hana", "Ivy", "Jon"]
_ITEMS = {
    "fruits": ["apples", "bananas", "pears", "plums", "figs", "cherries"],
    "objects": ["marbles", "pebbles", "shells", "coins", "cards", "books"],
}


def generate_mock_questions(n: int, seed: int = 0) -> list[Question]:
    """Addition word problems with known answers, for offline pipeline runs."""
    rng = random.Random(seed)
    questions = []
    for i in range(n):
        name = rng.choice(_NAMES)
        kind = rng.choice(sorted(_ITEMS))
        count = rng.randint(3, 5)  # 2-4 chain steps
        items = rng.sample(_ITEMS[kind], count)
        numbers = [rng.randint(2, 20) for _ in range(count)]
        parts = [f"{num} {item}" for num, item in zip(numbers, items)]
        listing = ", ".join(parts[:-1]) + f" and {parts[-1]}"
        text = f"{name} has {listing}. How many {kind} does {name} have?"
        questions.append(Question(id=f"q{i:04d}", text=text, gold_answer=str(sum(numbers))))
    return questions


# --- JSONL I/O ----------------------------------------------------------------


def write_questions_jsonl(path: str | Path, questions: Iterable[Question]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps({"id": q.id, "question": q.text, "answer": q.gold_answer},
                                ensure_ascii=False) + "\n")
            count += 1
    return count


def read_questions_jsonl(path: str | Path) -> list[Question]:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            questions.append(Question(id=str(rec["id"]), text=rec["question"],
                                      gold_answer=str(rec["answer"])))
    return questions


def solution_to_dict(s: Solution) -> dict:
    rec = {
        "question_id": s.question_id,
        "sample_index": s.sample_index,
        "cot": s.cot_text,
        "answer": s.extracted_answer,
        "correct": s.correct,
    }
    if s.teacher_steps is not None:
        rec["steps"] = [{"chosen": st.chosen_surface, "top": st.top_k}
                        for st in s.teacher_steps]
    return rec


def solution_from_dict(rec: dict) -> Solution:
    steps = None
    if "steps" in rec:
        steps = tuple(TeacherStep(chosen_surface=s["chosen"], top_k=dict(s["top"]))
                      for s in rec["steps"])
    return Solution(
        question_id=rec["question_id"],
        sample_index=rec["sample_index"],
        cot_text=rec["cot"],
        extracted_answer=rec["answer"],
        correct=rec["correct"],
        teacher_steps=steps,
    )


def write_solutions_jsonl(path: str | Path, solutions: Iterable[Solution]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in solutions:
            fh.write(json.dumps(solution_to_dict(s), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_solutions_jsonl(path: str | Path) -> Iterator[Solution]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield solution_from_dict(json.loads(line))


def write_instances_jsonl(path: str | Path, instances: Iterable[FormattedInstance]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(
                {"format": inst.format_tag, "input": inst.input_text,
                 "output": inst.output_text, "question_id": inst.question_id},
                ensure_ascii=False) + "\n")
            count += 1
    return count


def read_instances_jsonl(path: str | Path) -> Iterator[FormattedInstance]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            yield FormattedInstance(rec["format"], rec["input"], rec["output"],
                                    rec["question_id"])
