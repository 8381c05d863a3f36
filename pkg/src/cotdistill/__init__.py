"""Cross-tokenizer chain-of-thought distillation toolkit."""

from .alignment import AlignmentPair, AlignmentResult, LinkKind, align, classify_links
from .answers import answers_match, extract_answer, normalize_answer
from .corpus import (FormattedInstance, Question, Solution, filter_correct,
                     format_instance, generate_mock_questions, mix_formats,
                     sample_solutions, split_dev)
from .selection import (EvalRecord, MetricTrace, SelectionCriterion, accuracy,
                        report_tradeoff, select_checkpoint)
from .teacher import CachingTeacher, Completion, EndpointError, HttpTeacher, MockTeacher
from .tokenizer import (Token, TokenSequence, Vocabulary, decode,
                        demo_student_vocab, demo_teacher_vocab, encode,
                        normalize_surface)
from .toylm import (CategoricalTeacher, ToyLM, TrainConfig,
                    distribution_matching_loss, grad_check,
                    next_token_distribution, run_convergence_experiment,
                    sample_matching_loss)
from .transfer import (StudentTarget, TargetSequence, TeacherStep,
                       audit_targets, build_targets)

__version__ = "0.1.0"
