"""Tabular autoregressive toy model and both distillation objectives.

The student is an order-m table of logit rows, one per context of the m
previous token ids (begin-padded).  Each row is independently convex under
both objectives, so plain gradient descent is enough and the comparison
between sample matching (likelihood of teacher samples) and distribution
matching (truncated cross-entropy against teacher top-5 rows) stays clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .transfer import StudentTarget, TargetSequence

BEGIN = -1  # context padding id, never a real token


class OutOfVocabError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


class ToyLM:
    """Order-m tabular logit model over a vocabulary of ``vocab_size`` ids.

    Rows are materialized (zero-initialized) on first touch, so a fresh
    model predicts the uniform distribution everywhere.
    """

    def __init__(self, vocab_size: int, order: int = 2):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if order < 1:
            raise ValueError("order must be >= 1")
        self.vocab_size = vocab_size
        self.order = order
        self._row_index: dict[tuple[int, ...], int] = {}
        self._logits = np.zeros((0, vocab_size), dtype=np.float64)

    def context_key(self, context: Sequence[int]) -> tuple[int, ...]:
        """The last ``order`` ids of ``context``, left-padded with BEGIN."""
        ctx = tuple(context)[-self.order:]
        for t in ctx:
            if not (t == BEGIN or 0 <= t < self.vocab_size):
                raise OutOfVocabError(f"token id {t} outside vocabulary of {self.vocab_size}")
        return (BEGIN,) * (self.order - len(ctx)) + ctx

    def row_id(self, context: Sequence[int]) -> int:
        key = self.context_key(context)
        row = self._row_index.get(key)
        if row is None:
            row = len(self._row_index)
            if row == len(self._logits):
                grown = np.zeros((max(16, 2 * len(self._logits)), self.vocab_size))
                grown[: len(self._logits)] = self._logits
                self._logits = grown
            self._row_index[key] = row
        return row

    def logits_of(self, context: Sequence[int]) -> np.ndarray:
        return self._logits[self.row_id(context)]

    @property
    def touched_contexts(self) -> list[tuple[int, ...]]:
        return list(self._row_index)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def next_token_distribution(model: ToyLM, context: Sequence[int]) -> np.ndarray:
    """Softmax of the context's logit row; strictly positive, sums to one."""
    return softmax(model.logits_of(context))


# ---------------------------------------------------------------------------
# Losses and hand-derived gradients.
#
# Both objectives reduce per step to  s * logsumexp(z) - sum_v q_v * z_v
# with q the (possibly subnormalized) target over the row z and s = sum(q);
# the row gradient is  s * softmax(z) - q.  Sample matching is the s = 1,
# one-hot special case.
# ---------------------------------------------------------------------------


def _contexts_and_rows(model: ToyLM, token_ids: Sequence[int]) -> np.ndarray:
    rows = np.empty(len(token_ids), dtype=np.intp)
    for t in range(len(token_ids)):
        rows[t] = model.row_id(token_ids[:t])
    return rows


def _dense_targets(model: ToyLM, targets: TargetSequence) -> np.ndarray:
    dense = np.zeros((len(targets), model.vocab_size))
    for t, target in enumerate(targets.targets):
        for v, p in target.entries.items():
            if not 0 <= v < model.vocab_size:
                raise OutOfVocabError(f"target id {v} outside vocabulary")
            dense[t, v] = p
    return dense


def _truncated_ce(model: ToyLM, rows: np.ndarray, dense: np.ndarray) -> float:
    logits = model._logits[rows]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    mass = dense.sum(axis=1)
    return float(np.mean(mass * lse - (dense * logits).sum(axis=1)))


def _truncated_ce_grad(model: ToyLM, rows: np.ndarray,
                       dense: np.ndarray) -> dict[tuple[int, ...], np.ndarray]:
    p = softmax(model._logits[rows])
    per_step = (dense.sum(axis=1, keepdims=True) * p - dense) / len(rows)
    acc = np.zeros_like(model._logits)
    np.add.at(acc, rows, per_step)
    by_row = {r: i for i, r in enumerate(np.unique(rows))}
    key_of = {row: key for key, row in model._row_index.items()}
    return {key_of[r]: acc[r].copy() for r in sorted(by_row)}


def sample_matching_loss(model: ToyLM, token_ids: Sequence[int]) -> float:
    """Mean negative log-likelihood of the observed tokens."""
    if len(token_ids) == 0:
        raise ValueError("sequence must be non-empty")
    rows = _contexts_and_rows(model, token_ids)
    dense = np.zeros((len(token_ids), model.vocab_size))
    for t, y in enumerate(token_ids):
        if not 0 <= y < model.vocab_size:
            raise OutOfVocabError(f"token id {y} outside vocabulary")
        dense[t, y] = 1.0
    return _truncated_ce(model, rows, dense)


def sample_matching_grad(model: ToyLM,
                         token_ids: Sequence[int]) -> dict[tuple[int, ...], np.ndarray]:
    rows = _contexts_and_rows(model, token_ids)
    dense = np.zeros((len(token_ids), model.vocab_size))
    for t, y in enumerate(token_ids):
        dense[t, y] = 1.0
    return _truncated_ce_grad(model, rows, dense)


def distribution_matching_loss(model: ToyLM, targets: TargetSequence,
                               token_ids: Sequence[int]) -> float:
    """Mean truncated cross-entropy against the per-step target support.

    Differs from the KL divergence to the target by a model-independent
    constant, so gradients are identical; always non-negative because the
    student's log-probabilities are.
    """
    if len(targets) != len(token_ids):
        raise LengthMismatchError(f"{len(targets)} targets for {len(token_ids)} tokens")
    if len(token_ids) == 0:
        raise ValueError("sequence must be non-empty")
    rows = _contexts_and_rows(model, token_ids)
    return _truncated_ce(model, rows, _dense_targets(model, targets))


def distribution_matching_grad(model: ToyLM, targets: TargetSequence,
                               token_ids: Sequence[int]) -> dict[tuple[int, ...], np.ndarray]:
    if len(targets) != len(token_ids):
        raise LengthMismatchError(f"{len(targets)} targets for {len(token_ids)} tokens")
    rows = _contexts_and_rows(model, token_ids)
    return _truncated_ce_grad(model, rows, _dense_targets(model, targets))


def apply_gradient(model: ToyLM, grads: dict[tuple[int, ...], np.ndarray],
                   learning_rate: float) -> None:
    for key, g in grads.items():
        model._logits[model._row_index[key]] -= learning_rate * g


def grad_check(model: ToyLM, loss_fn: Callable[[], float],
               grad_fn: Callable[[], dict[tuple[int, ...], np.ndarray]],
               epsilon: float = 1e-5) -> float:
    """Worst relative error of the analytic gradient vs central differences.

    Every logit of every touched row is perturbed by +/- epsilon.  The
    relative error uses a unit floor in the denominator so near-zero
    gradient components are compared absolutely.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    analytic = grad_fn()
    worst = 0.0
    for key, grad in analytic.items():
        row = model._row_index[key]
        for v in range(model.vocab_size):
            original = model._logits[row, v]
            model._logits[row, v] = original + epsilon
            up = loss_fn()
            model._logits[row, v] = original - epsilon
            down = loss_fn()
            model._logits[row, v] = original
            numeric = (up - down) / (2 * epsilon)
            rel = abs(grad[v] - numeric) / max(1.0, abs(grad[v]), abs(numeric))
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Synthetic teacher process and the convergence experiment
# ---------------------------------------------------------------------------


class CategoricalTeacher:
    """Known order-m categorical process with seeded random rows."""

    def __init__(self, vocab_size: int = 16, order: int = 2,
                 logit_scale: float = 2.0, seed: int = 0):
        self.vocab_size = vocab_size
        self.order = order
        rng = np.random.default_rng(seed)
        self._rows: dict[tuple[int, ...], np.ndarray] = {}
        for ctx in self._all_contexts():
            self._rows[ctx] = softmax(rng.normal(0.0, logit_scale, vocab_size))

    def _all_contexts(self):
        # BEGIN padding only ever appears as a prefix.
        def expand(prefix_len: int):
            pad = (BEGIN,) * prefix_len
            real = self.order - prefix_len
            if real == 0:
                yield pad
                return
            idx = [0] * real
            while True:
                yield pad + tuple(idx)
                for pos in reversed(range(real)):
                    idx[pos] += 1
                    if idx[pos] < self.vocab_size:
                        break
                    idx[pos] = 0
                else:
                    return

        for prefix_len in range(self.order, -1, -1):
            yield from expand(prefix_len)

    def context_key(self, context: Sequence[int]) -> tuple[int, ...]:
        ctx = tuple(context)[-self.order:]
        return (BEGIN,) * (self.order - len(ctx)) + ctx

    def step_distribution(self, context: Sequence[int]) -> np.ndarray:
        return self._rows[self.context_key(context)]

    def sample(self, length: int, rng: np.random.Generator) -> list[int]:
        out: list[int] = []
        for _ in range(length):
            probs = self.step_distribution(out)
            out.append(int(rng.choice(self.vocab_size, p=probs)))
        return out

    def mean_nll(self, sequences: Sequence[Sequence[int]]) -> float:
        total, steps = 0.0, 0
        for seq in sequences:
            for t, y in enumerate(seq):
                total -= math.log(self.step_distribution(seq[:t])[y])
                steps += 1
        return total / steps

    def top_k_target(self, context: Sequence[int], k: int = 5,
                     force_id: int | None = None) -> StudentTarget:
        """Top-k truncation of the true row, unrenormalized.

        ``force_id`` mirrors the transfer module's gold forcing: when the
        observed token fell outside the top k, it joins the support at its
        true probability, keeping the sampled stream likelihood-supported.
        """
        probs = self.step_distribution(context)
        top = np.argsort(-probs, kind="stable")[:k]
        entries = {int(v): float(probs[v]) for v in top}
        if force_id is not None and force_id not in entries:
            entries[force_id] = float(probs[force_id])
        return StudentTarget(kind="transferred", entries=entries)


@dataclass
class TrainConfig:
    learning_rate: float = 1.5
    steps: int = 300
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    objective: str = "sample_matching"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.objective not in ("sample_matching", "distribution_matching"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass(frozen=True)
class CurvePoint:
    step: int
    train_loss: float
    heldout_loss: float


@dataclass(frozen=True)
class LossCurve:
    objective: str
    seed: int
    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        steps = [p.step for p in self.points]
        if steps != sorted(set(steps)):
            raise ValueError("curve steps must be strictly increasing")


@dataclass(frozen=True)
class ArmResult:
    curve: LossCurve
    steps_to_threshold: int | None
    final_heldout_loss: float


@dataclass(frozen=True)
class ConvergenceResult:
    threshold: float
    teacher_heldout_nll: float
    arms: dict[str, ArmResult]


def _prepare(model: ToyLM, sequences: Sequence[Sequence[int]],
             dense_rows: Callable[[Sequence[int], int], np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    rows, dense = [], []
    for seq in sequences:
        for t in range(len(seq)):
            rows.append(model.row_id(seq[:t]))
            dense.append(dense_rows(seq, t))
    return np.asarray(rows, dtype=np.intp), np.vstack(dense)


def _fit(model: ToyLM, rows: np.ndarray, dense: np.ndarray,
         heldout_rows: np.ndarray, heldout_ids: np.ndarray,
         config: TrainConfig, eval_every: int, threshold: float,
         objective: str, seed: int) -> ArmResult:
    def heldout_nll() -> float:
        logits = model._logits[heldout_rows]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(len(heldout_ids)), heldout_ids].mean())

    def train_loss() -> float:
        return _truncated_ce(model, rows, dense)

    mass = dense.sum(axis=1, keepdims=True)
    points = [CurvePoint(0, train_loss(), heldout_nll())]
    reached = 0 if points[0].heldout_loss <= threshold else None
    rng = np.random.default_rng(config.seed)
    # The full-batch row layout is fixed, so precompute a sorted segment-sum
    # plan instead of scattering into the whole table every update.
    perm = np.argsort(rows, kind="stable")
    sorted_rows = rows[perm]
    starts = np.flatnonzero(np.r_[True, sorted_rows[1:] != sorted_rows[:-1]])
    unique_rows = sorted_rows[starts]
    for step in range(1, config.steps + 1):
        if config.batch_size and config.batch_size < len(rows):
            pick = rng.choice(len(rows), size=config.batch_size, replace=False)
            b_rows, b_dense, b_mass = rows[pick], dense[pick], mass[pick]
            p = softmax(model._logits[b_rows])
            per_step = (b_mass * p - b_dense) / len(b_rows)
            acc = np.zeros_like(model._logits)
            np.add.at(acc, b_rows, per_step)
            model._logits -= config.learning_rate * acc
        else:
            p = softmax(model._logits[rows])
            per_step = (mass * p - dense) / len(rows)
            seg = np.add.reduceat(per_step[perm], starts, axis=0)
            model._logits[unique_rows] -= config.learning_rate * seg
        if step % eval_every == 0 or step == config.steps:
            point = CurvePoint(step, train_loss(), heldout_nll())
            points.append(point)
            if reached is None and point.heldout_loss <= threshold:
                reached = step
    return ArmResult(
        curve=LossCurve(objective=objective, seed=seed, points=tuple(points)),
        steps_to_threshold=reached,
        final_heldout_loss=points[-1].heldout_loss,
    )


def run_convergence_trial(
    seed: int,
    vocab_size: int = 16,
    order: int = 2,
    n_train: int = 48,
    seq_len: int = 24,
    n_heldout: int = 64,
    updates: int = 300,
    learning_rate: float = 1.5,
    eval_every: int = 5,
    tau_slack: float = 0.05,
    logit_scale: float = 2.0,
    top_k: int = 5,
) -> ConvergenceResult:
    """Train one student per objective on identical teacher data streams.

    Held-out loss is the student's negative log-likelihood on fresh teacher
    samples for both arms, so the curves are directly comparable; the
    threshold is the teacher's own held-out NLL plus ``tau_slack`` nats.
    """
    teacher = CategoricalTeacher(vocab_size=vocab_size, order=order,
                                 logit_scale=logit_scale, seed=seed * 7919 + 1)
    data_rng = np.random.default_rng(seed * 104729 + 2)
    train = [teacher.sample(seq_len, data_rng) for _ in range(n_train)]
    heldout = [teacher.sample(seq_len, data_rng) for _ in range(n_heldout)]
    teacher_nll = teacher.mean_nll(heldout)
    threshold = teacher_nll + tau_slack

    arms: dict[str, ArmResult] = {}
    for objective in ("sample_matching", "distribution_matching"):
        model = ToyLM(vocab_size, order)
        if objective == "sample_matching":
            def dense_row(seq, t, _m=model):
                row = np.zeros(_m.vocab_size)
                row[seq[t]] = 1.0
                return row
        else:
            def dense_row(seq, t, _m=model, _teacher=teacher):
                row = np.zeros(_m.vocab_size)
                target = _teacher.top_k_target(seq[:t], k=top_k, force_id=seq[t])
                for v, p in target.entries.items():
                    row[v] = p
                return row
        rows, dense = _prepare(model, train, dense_row)
        h_rows, h_ids = [], []
        for seq in heldout:
            for t in range(len(seq)):
                h_rows.append(model.row_id(seq[:t]))
                h_ids.append(seq[t])
        config = TrainConfig(learning_rate=learning_rate, steps=updates,
                             seed=seed, objective=objective)
        arms[objective] = _fit(
            model, rows, dense,
            np.asarray(h_rows, dtype=np.intp), np.asarray(h_ids, dtype=np.intp),
            config, eval_every, threshold, objective, seed,
        )
    return ConvergenceResult(threshold=threshold, teacher_heldout_nll=teacher_nll,
                             arms=arms)


@dataclass(frozen=True)
class ExperimentSummary:
    trials: tuple[ConvergenceResult, ...]
    faster_or_equal: int  # seeds where distribution matching reached tau no later
    lower_or_equal_final: int

    @property
    def n_seeds(self) -> int:
        return len(self.trials)


def run_convergence_experiment(seeds: int = 10, base_seed: int = 0,
                               **trial_kwargs) -> ExperimentSummary:
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    trials = tuple(run_convergence_trial(base_seed + i, **trial_kwargs)
                   for i in range(seeds))
    faster = 0
    lower = 0
    for trial in trials:
        dist = trial.arms["distribution_matching"]
        samp = trial.arms["sample_matching"]
        d_steps = dist.steps_to_threshold
        s_steps = samp.steps_to_threshold
        if d_steps is not None and (s_steps is None or d_steps <= s_steps):
            faster += 1
        if dist.final_heldout_loss <= samp.final_heldout_loss:
            lower += 1
    return ExperimentSummary(trials=trials, faster_or_equal=faster,
                             lower_or_equal_final=lower)
