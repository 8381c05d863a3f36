"""Single entry point wiring the pipeline stages together.

Every subcommand reads and writes its owning module's documented file
formats, takes defaults from an optional flat ``key = value`` config file
(explicit flags win), and exits 0 on success, 1 on a validation error, 2 on
an I/O or endpoint error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus, pipeline, selection, toylm
from .alignment import align
from .corpus import subseed
from .teacher import CachingTeacher, EndpointError, HttpTeacher, MockTeacher
from .tokenizer import encode, resolve_vocab
from .transfer import StudentTarget, TargetSequence


@dataclass
class PipelineConfig:
    """Defaults for every stage; the numeric ones follow the source setup
    (40 samples per question, 4 in-context exemplars, 500 dev instances)."""

    teacher_vocab: str = "demo-teacher"
    student_vocab: str = "demo-student"
    endpoint: str = ""
    n: int = 40
    max_tokens: int = 256
    temperature: float = 0.7
    top_logprobs: int = 5
    error_rate: float = 0.0
    epsilon: float = 0.05
    k: int = 4
    ratio: str = "B1=1,B2=1,B3=1,B4=1"
    dev_size: int = 500
    seed: int = 0
    seeds: int = 10
    updates: int = 300
    learning_rate: float = 1.5
    vocab_size: int = 16
    order: int = 2
    n_train: int = 48
    seq_len: int = 24
    n_heldout: int = 64
    eval_every: int = 5
    tau_slack: float = 0.05
    logit_scale: float = 2.0
    top_k: int = 5
    grad_epsilon: float = 1e-5
    grad_threshold: float = 1e-5
    in_dist: str = "GSM8K"
    ood: str = "MultiArith,ASDiv,SVAMP"


def load_config(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` text file; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class _Parser(argparse.ArgumentParser):
    # The contract maps usage errors to exit code 1 (validation), not
    # argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_ratio(spec: str) -> dict[str, int]:
    ratio: dict[str, int] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        tag, _, weight = part.partition("=")
        ratio[corpus.resolve_format_tag(tag.strip())] = int(weight or 1)
    if not ratio:
        raise ValueError(f"empty ratio spec {spec!r}")
    return ratio


def _build_client(args) -> object:
    if args.mock:
        client = MockTeacher(error_rate=args.error_rate,
                             seed=subseed(args.seed, "gen"),
                             epsilon=args.epsilon,
                             vocab=resolve_vocab(args.teacher_vocab))
    else:
        client = HttpTeacher(endpoint=args.endpoint or None)
    if args.cache_dir:
        client = CachingTeacher(client, args.cache_dir)
    return client


def _out_stream(path: str | None):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


# --- subcommand bodies -------------------------------------------------------


def _input_texts(args) -> list[str]:
    if args.text is not None:
        return [args.text]
    if args.input is None:
        raise ValueError("pass --text or --input")
    return [ln.rstrip("\n") for ln in open(args.input, encoding="utf-8")]


def cmd_tokenize(args) -> int:
    vocab = resolve_vocab(args.vocab)
    texts = _input_texts(args)
    out = _out_stream(args.out)
    for text in texts:
        seq = encode(text, vocab, char_fallback=args.char_fallback)
        out.write(json.dumps({"tokenizer": seq.tokenizer_id,
                              "ids": list(seq.ids),
                              "surfaces": list(seq.surfaces)},
                             ensure_ascii=False) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def cmd_align(args) -> int:
    teacher_vocab = resolve_vocab(args.teacher_vocab)
    student_vocab = resolve_vocab(args.student_vocab)
    if args.solutions:
        if not args.out:
            raise ValueError("--solutions mode requires --out")
        n = pipeline.run_align(args.solutions, teacher_vocab, student_vocab, args.out)
        print(f"aligned {n} solutions -> {args.out}", file=sys.stderr)
        return 0
    texts = _input_texts(args)
    out = _out_stream(args.out)
    for text in texts:
        result = align(encode(text, teacher_vocab), encode(text, student_vocab))
        out.write(json.dumps({
            "pairs": [[p.teacher_index, p.student_index, p.pair_cost]
                      for p in result.pairs],
            "total_cost": result.total_cost,
            "link_kinds": [k.value for k in result.student_link_kinds],
        }, ensure_ascii=False) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def cmd_transfer(args) -> int:
    stats = pipeline.run_transfer(
        args.solutions, resolve_vocab(args.teacher_vocab),
        resolve_vocab(args.student_vocab), args.out, renormalize=args.renormalize,
    )
    print(f"{stats.sequences} sequences: {stats.transferred} transferred / "
          f"{stats.one_hot} one-hot steps, mean kept mass {stats.mean_mass:.6f}, "
          f"{stats.gold_forced} gold-forced", file=sys.stderr)
    return 0


def cmd_gen(args) -> int:
    questions_path = Path(args.questions)
    if args.make_questions:
        questions = corpus.generate_mock_questions(args.make_questions,
                                                   seed=subseed(args.seed, "questions"))
        corpus.write_questions_jsonl(questions_path, questions)
    questions = corpus.read_questions_jsonl(questions_path)
    client = _build_client(args)
    written = pipeline.run_gen(questions, client, args.out, n=args.n,
                               max_tokens=args.max_tokens, temperature=args.temperature,
                               top_logprobs=args.top_logprobs)
    print(f"wrote {written} solutions for {len(questions)} questions -> {args.out}",
          file=sys.stderr)
    return 0


def cmd_filter(args) -> int:
    kept, total = pipeline.run_filter(args.solutions, args.out)
    pct = 100.0 * kept / total if total else 0.0
    print(f"kept {kept}/{total} ({pct:.2f}%)")
    return 0


def cmd_format(args) -> int:
    questions = corpus.read_questions_jsonl(args.questions)
    counts = pipeline.run_format(questions, args.solutions, args.out,
                                 ratio=_parse_ratio(args.ratio), k=args.k,
                                 seed=args.seed)
    rendered = ", ".join(f"{t}={n}" for t, n in sorted(counts.items()))
    print(f"formatted {sum(counts.values())} instances ({rendered}) -> {args.out}",
          file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    n_dev, n_test = pipeline.run_split(args.input, args.dev_out, args.test_out,
                                       dev_size=args.dev_size, seed=args.seed)
    print(f"split {n_dev + n_test} -> dev {n_dev}, test {n_test}", file=sys.stderr)
    return 0


def cmd_train_toy(args) -> int:
    summary = toylm.run_convergence_experiment(
        seeds=args.seeds, base_seed=args.seed, vocab_size=args.vocab_size,
        order=args.order, n_train=args.n_train, seq_len=args.seq_len,
        n_heldout=args.n_heldout, updates=args.updates,
        learning_rate=args.learning_rate, eval_every=args.eval_every,
        tau_slack=args.tau_slack, logit_scale=args.logit_scale, top_k=args.top_k,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "objective", "seed", "train_loss", "heldout_loss"])
        for trial in summary.trials:
            for arm in trial.arms.values():
                for p in arm.curve.points:
                    writer.writerow([p.step, arm.curve.objective, arm.curve.seed,
                                     repr(p.train_loss), repr(p.heldout_loss)])
    payload = {
        "n_seeds": summary.n_seeds,
        "faster_or_equal": summary.faster_or_equal,
        "lower_or_equal_final": summary.lower_or_equal_final,
        "trials": [
            {
                "threshold": t.threshold,
                "teacher_heldout_nll": t.teacher_heldout_nll,
                "arms": {
                    name: {"steps_to_threshold": arm.steps_to_threshold,
                           "final_heldout_loss": arm.final_heldout_loss}
                    for name, arm in t.arms.items()
                },
            }
            for t in summary.trials
        ],
    }
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2) + "\n",
                                          encoding="utf-8")
    print(f"distribution matching reached the threshold no later in "
          f"{summary.faster_or_equal}/{summary.n_seeds} seeds and ended no higher in "
          f"{summary.lower_or_equal_final}/{summary.n_seeds}")
    return 0


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    model = toylm.ToyLM(args.vocab_size, args.order)
    ids = [int(v) for v in rng.integers(0, args.vocab_size, size=args.seq_len)]
    for t in range(len(ids)):
        row = model.row_id(ids[:t])
        model._logits[row] = rng.normal(0.0, 1.0, args.vocab_size)
    targets = TargetSequence(question_id="grad-check", targets=tuple(
        _random_sparse_target(rng, args.vocab_size, gold=ids[t])
        for t in range(len(ids))
    ))
    worst = {
        "sample_matching": toylm.grad_check(
            model, lambda: toylm.sample_matching_loss(model, ids),
            lambda: toylm.sample_matching_grad(model, ids), epsilon=args.epsilon),
        "distribution_matching": toylm.grad_check(
            model, lambda: toylm.distribution_matching_loss(model, targets, ids),
            lambda: toylm.distribution_matching_grad(model, targets, ids),
            epsilon=args.epsilon),
    }
    failed = False
    for name, err in worst.items():
        print(f"{name}: max relative error {err:.3e}")
        failed = failed or err > args.threshold
    return 1 if failed else 0


def _random_sparse_target(rng, vocab_size: int, gold: int) -> StudentTarget:
    support = {gold} | {int(v) for v in rng.integers(0, vocab_size, size=4)}
    raw = {v: float(rng.uniform(0.05, 1.0)) for v in support}
    total = sum(raw.values()) * (1.0 + float(rng.uniform(0.0, 0.2)))
    return StudentTarget(kind="transferred",
                         entries={v: p / total for v, p in raw.items()})


def cmd_select(args) -> int:
    trace = selection.read_trace_csv(args.trace)
    criterion = selection.SelectionCriterion.of(
        *[d.strip() for d in args.datasets.split(",") if d.strip()])
    print(selection.select_checkpoint(trace, criterion))
    return 0


def cmd_report(args) -> int:
    trace = selection.read_trace_csv(args.trace)
    ood = [d.strip() for d in args.ood.split(",") if d.strip()]
    report = selection.report_tradeoff(trace, args.in_dist, ood)
    rendered = (selection.render_report_csv(report) if args.format == "csv"
                else selection.render_report_text(report))
    out = _out_stream(args.out)
    out.write(rendered)
    if out is not sys.stdout:
        out.close()
    return 0


# --- parser assembly ---------------------------------------------------------


def build_parser(config: dict[str, str] | None = None) -> _Parser:
    defaults = PipelineConfig()
    config = config or {}

    def d(name: str, cast=None):
        """Effective default: config file value over the built-in."""
        built_in = getattr(defaults, name)
        if name in config:
            raw = config[name]
            caster = cast or type(built_in)
            return caster(raw) if caster is not bool else raw.lower() in ("1", "true", "yes")
        return built_in

    fmt = argparse.ArgumentDefaultsHelpFormatter
    top = _Parser(prog="cotdistill",
                  description="chain-of-thought distillation pipeline stages")
    top.add_argument("--config", default=None, help="flat key = value config file")
    sub = top.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("tokenize", formatter_class=fmt,
                       help="greedy longest-match tokenize text")
    p.add_argument("--vocab", default=d("student_vocab"),
                   help="vocab file or demo-teacher/demo-student")
    p.add_argument("--text", default=None, help="single text to tokenize")
    p.add_argument("--input", default=None, help="file of texts, one per line")
    p.add_argument("--char-fallback", action="store_true",
                   help="tokenize unseen characters as implicit tail entries")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("align", formatter_class=fmt,
                       help="align two tokenizations of the same text")
    p.add_argument("--teacher-vocab", default=d("teacher_vocab"))
    p.add_argument("--student-vocab", default=d("student_vocab"))
    p.add_argument("--text", default=None)
    p.add_argument("--input", default=None, help="file of texts, one per line")
    p.add_argument("--solutions", default=None,
                   help="solutions JSONL with teacher steps to align")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("transfer", formatter_class=fmt,
                       help="build per-student-token target distributions")
    p.add_argument("--solutions", required=True, help="filtered solutions JSONL")
    p.add_argument("--teacher-vocab", default=d("teacher_vocab"))
    p.add_argument("--student-vocab", default=d("student_vocab"))
    p.add_argument("--renormalize", action="store_true",
                   help="rescale kept top-5 mass to 1 (sensitivity checks)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("gen", formatter_class=fmt,
                       help="sample teacher solutions per question")
    p.add_argument("--questions", required=True, help="questions JSONL")
    p.add_argument("--make-questions", type=int, default=0, metavar="N",
                   help="synthesize N mock questions into --questions first")
    p.add_argument("--mock", action="store_true", help="use the deterministic mock teacher")
    p.add_argument("--endpoint", default=d("endpoint"),
                   help="completion endpoint (or TEACHER_ENDPOINT)")
    p.add_argument("--cache-dir", default=None, help="read-through completion cache")
    p.add_argument("--n", type=int, default=d("n"), help="samples per question")
    p.add_argument("--max-tokens", type=int, default=d("max_tokens"))
    p.add_argument("--temperature", type=float, default=d("temperature"))
    p.add_argument("--top-logprobs", type=int, default=d("top_logprobs"))
    p.add_argument("--error-rate", type=float, default=d("error_rate"),
                   help="mock teacher wrong-answer rate")
    p.add_argument("--epsilon", type=float, default=d("epsilon"),
                   help="mock teacher distractor mass")
    p.add_argument("--teacher-vocab", default=d("teacher_vocab"))
    p.add_argument("--seed", type=int, default=d("seed"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("filter", formatter_class=fmt,
                       help="keep solutions whose answer matches gold")
    p.add_argument("--solutions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("format", formatter_class=fmt,
                       help="render and interleave the four tuning formats")
    p.add_argument("--questions", required=True)
    p.add_argument("--solutions", required=True)
    p.add_argument("--ratio", default=d("ratio"),
                   help="format weights, e.g. B2=1,B4=1")
    p.add_argument("--k", type=int, default=d("k"), help="in-context exemplars")
    p.add_argument("--seed", type=int, default=d("seed"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_format)

    p = sub.add_parser("split", formatter_class=fmt,
                       help="seed-deterministic dev/test split of a JSONL file")
    p.add_argument("--input", required=True)
    p.add_argument("--dev-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--dev-size", type=int, default=d("dev_size"))
    p.add_argument("--seed", type=int, default=d("seed"))
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-toy", formatter_class=fmt,
                       help="run the two-objective convergence experiment")
    p.add_argument("--seeds", type=int, default=d("seeds"))
    p.add_argument("--seed", type=int, default=d("seed"), help="base seed")
    p.add_argument("--vocab-size", type=int, default=d("vocab_size"))
    p.add_argument("--order", type=int, default=d("order"))
    p.add_argument("--n-train", type=int, default=d("n_train"))
    p.add_argument("--seq-len", type=int, default=d("seq_len"))
    p.add_argument("--n-heldout", type=int, default=d("n_heldout"))
    p.add_argument("--updates", type=int, default=d("updates"))
    p.add_argument("--learning-rate", type=float, default=d("learning_rate"))
    p.add_argument("--eval-every", type=int, default=d("eval_every"))
    p.add_argument("--tau-slack", type=float, default=d("tau_slack"))
    p.add_argument("--logit-scale", type=float, default=d("logit_scale"))
    p.add_argument("--top-k", type=int, default=d("top_k"))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("grad-check", formatter_class=fmt,
                       help="analytic vs finite-difference gradients")
    p.add_argument("--seed", type=int, default=d("seed"))
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--order", type=int, default=d("order"))
    p.add_argument("--seq-len", type=int, default=12)
    p.add_argument("--epsilon", type=float, default=d("grad_epsilon"))
    p.add_argument("--threshold", type=float, default=d("grad_threshold"))
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("select", formatter_class=fmt,
                       help="argmax checkpoint under a dataset criterion")
    p.add_argument("--trace", required=True, help="CSV of step,dataset,accuracy")
    p.add_argument("--datasets", default=d("in_dist"),
                   help="comma-separated criterion datasets")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("report", formatter_class=fmt,
                       help="in-dist vs OOD selection tradeoff table")
    p.add_argument("--trace", required=True)
    p.add_argument("--in-dist", default=d("in_dist"))
    p.add_argument("--ood", default=d("ood"))
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_report)

    return top


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # Pre-scan for --config so file values become the visible defaults.
    config: dict[str, str] = {}
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            config = load_config(known.config)
        args = build_parser(config).parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except EndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
