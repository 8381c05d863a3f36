"""Teacher completion clients: HTTP endpoint, deterministic mock, disk cache.

All three speak the same interface: ``complete(prompt, n, max_tokens,
temperature, top_logprobs)`` returning ``n`` completions, each a text plus
per-step top-5 probability records.  The mock exists so the whole pipeline
can run offline and bit-reproducibly at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .tokenizer import Vocabulary, demo_teacher_vocab, encode
from .transfer import TeacherStep

ENDPOINT_ENV = "TEACHER_ENDPOINT"
API_KEY_ENV = "TEACHER_API_KEY"


class EndpointError(RuntimeError):
    """A completion request failed; carries the HTTP status and sample index."""

    def __init__(self, message: str, status: int | None = None, sample_index: int = 0):
        self.status = status
        self.sample_index = sample_index
        super().__init__(message)


@dataclass(frozen=True)
class Completion:
    text: str
    steps: tuple[TeacherStep, ...] = field(default=())


class TeacherClient(Protocol):
    def complete(
        self,
        prompt: str,
        n: int,
        max_tokens: int = 256,
        temperature: float = 0.7,
        top_logprobs: int = 5,
    ) -> list[Completion]:
        ...


def completion_to_dict(c: Completion) -> dict:
    return {
        "text": c.text,
        "steps": [{"chosen": s.chosen_surface, "top": s.top_k} for s in c.steps],
    }


def completion_from_dict(d: dict) -> Completion:
    steps = tuple(
        TeacherStep(chosen_surface=s["chosen"], top_k=dict(s["top"]))
        for s in d.get("steps", [])
    )
    return Completion(text=d["text"], steps=steps)


# ---------------------------------------------------------------------------
# Deterministic mock teacher
# ---------------------------------------------------------------------------

_QUESTION_RE = re.compile(r"Question:\s*(.*?)\s*(?:\nAnswer:|$)", re.DOTALL)
_INT_RE = re.compile(r"\d+")


class MockTeacher:
    """Scripted arithmetic-CoT generator.

    Reads the numbers out of the last question in the prompt and emits a
    running-sum chain ending in "The answer is N".  A configured fraction of
    the samples per call gets a wrong final answer: exactly
    ``round(n * error_rate)`` of the ``n`` samples, chosen by a seeded
    shuffle, so the kept-after-filtering rate is exact rather than a
    Bernoulli draw.  Top-5 step records are fabricated per token: the chosen
    token at probability ``1 - epsilon``, ``epsilon`` split over four
    deterministic distractor surfaces.
    """

    def __init__(
        self,
        error_rate: float = 0.0,
        seed: int = 0,
        epsilon: float = 0.05,
        vocab: Vocabulary | None = None,
    ):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        self.error_rate = error_rate
        self.seed = seed
        self.epsilon = epsilon
        self.vocab = vocab or demo_teacher_vocab()

    def complete(
        self,
        prompt: str,
        n: int,
        max_tokens: int = 256,
        temperature: float = 0.7,
        top_logprobs: int = 5,
    ) -> list[Completion]:
        if n < 1:
            raise ValueError("n must be >= 1")
        numbers = self._question_numbers(prompt)
        wrong = self._wrong_indices(prompt, n)
        return [
            self._one_completion(numbers, wrong_delta=(1 + i % 3) if i in wrong else 0,
                                 max_tokens=max_tokens, top_logprobs=top_logprobs)
            for i in range(n)
        ]

    def _question_numbers(self, prompt: str) -> list[int]:
        matches = _QUESTION_RE.findall(prompt)
        question = matches[-1] if matches else prompt
        return [int(m) for m in _INT_RE.findall(question)] or [0]

    def _wrong_indices(self, prompt: str, n: int) -> set[int]:
        count = round(n * self.error_rate)
        digest = hashlib.sha256(f"{self.seed}|{prompt}".encode()).digest()
        order = sorted(range(n), key=lambda i: hashlib.sha256(digest + bytes([i % 256, i // 256])).digest())
        return set(order[:count])

    def _one_completion(self, numbers: list[int], wrong_delta: int,
                        max_tokens: int, top_logprobs: int) -> Completion:
        sentences = []
        running = numbers[0]
        for x in numbers[1:]:
            nxt = running + x
            sentences.append(f"{running} + {x} = {nxt}.")
            running = nxt
        final = running + wrong_delta
        if wrong_delta and sentences:
            # Keep the text self-consistent: the last equation shows the same
            # wrong total as the answer sentence.
            parts = sentences[-1].rsplit("= ", 1)
            sentences[-1] = f"{parts[0]}= {final}."
        text = " ".join(sentences + [f"The answer is {final}"])
        seq = encode(text, self.vocab)
        tokens = seq.tokens[:max_tokens]
        steps = tuple(
            self._fabricate_step(t.surface, t.id, min(top_logprobs, 5)) for t in tokens
        )
        if len(tokens) < len(seq.tokens):
            from .tokenizer import TokenSequence, decode
            text = decode(TokenSequence(tokens=tokens, tokenizer_id=seq.tokenizer_id,
                                        marker=seq.marker))
        return Completion(text=text, steps=steps)

    def _fabricate_step(self, surface: str, token_id: int, k: int) -> TeacherStep:
        top: dict[str, float] = {surface: 1.0 - self.epsilon}
        if k > 1 and self.epsilon > 0:
            share = self.epsilon / (k - 1)
            stride, offset = 7, token_id
            while len(top) < k:
                offset = (offset + stride) % len(self.vocab)
                candidate = self.vocab.surfaces[offset]
                if candidate not in top:
                    top[candidate] = share
        return TeacherStep(chosen_surface=surface, top_k=top)


# ---------------------------------------------------------------------------
# HTTP completion-endpoint client
# ---------------------------------------------------------------------------


class HttpTeacher:
    """Client for a completions endpoint with per-token top logprobs.

    POSTs ``{prompt, n, max_tokens, temperature, logprobs}`` and expects
    ``{"choices": [{"text": ..., "logprobs": {"tokens": [...],
    "top_logprobs": [{token: logprob, ...}, ...]}}, ...]}``.  Endpoint URL
    and bearer token come from the ``TEACHER_ENDPOINT`` / ``TEACHER_API_KEY``
    environment variables unless given explicitly.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 timeout: float = 120.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise ValueError(f"no endpoint: pass one or set {ENDPOINT_ENV}")
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.timeout = timeout

    def complete(self, prompt: str, n: int, max_tokens: int = 256,
                 temperature: float = 0.7, top_logprobs: int = 5) -> list[Completion]:
        payload = {
            "prompt": prompt,
            "n": n,
            "max_tokens": max_tokens,
            "temperature": temperature,
            "logprobs": top_logprobs,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.endpoint, json=payload, headers=headers,
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise EndpointError(f"request failed: {exc}", status=None) from exc
        if resp.status_code != 200:
            raise EndpointError(f"endpoint returned {resp.status_code}",
                                status=resp.status_code)
        try:
            choices = resp.json()["choices"]
        except (ValueError, KeyError) as exc:
            raise EndpointError(f"malformed endpoint reply: {exc}", status=resp.status_code) from exc
        completions = []
        for idx, choice in enumerate(choices):
            try:
                completions.append(self._parse_choice(choice))
            except (KeyError, TypeError, ValueError) as exc:
                raise EndpointError(f"malformed choice: {exc}",
                                    status=resp.status_code, sample_index=idx) from exc
        return completions

    @staticmethod
    def _parse_choice(choice: dict) -> Completion:
        logprobs = choice.get("logprobs") or {}
        tokens = logprobs.get("tokens") or []
        tops = logprobs.get("top_logprobs") or []
        steps = []
        for tok, top in zip(tokens, tops):
            probs = {t: min(1.0, math.exp(lp)) for t, lp in (top or {}).items()}
            if len(probs) > 5:
                probs = dict(sorted(probs.items(), key=lambda kv: -kv[1])[:5])
            steps.append(TeacherStep(chosen_surface=tok, top_k=probs or {tok: 1.0}))
        return Completion(text=choice["text"], steps=tuple(steps))


# ---------------------------------------------------------------------------
# Read-through disk cache
# ---------------------------------------------------------------------------


class CachingTeacher:
    """Read-through cache keyed by hash(prompt, sample index, decode params).

    On a full hit every sample is served from disk bit-identically; on any
    miss the inner client is asked for the whole batch and each sample is
    persisted as soon as it is received, so earlier samples survive a
    failure partway through.
    """

    def __init__(self, inner: TeacherClient, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def cache_key(prompt: str, sample_index: int, max_tokens: int,
                  temperature: float, top_logprobs: int) -> str:
        blob = json.dumps(
            {"prompt": prompt, "sample_index": sample_index, "max_tokens": max_tokens,
             "temperature": temperature, "top_logprobs": top_logprobs},
            sort_keys=True, ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def complete(self, prompt: str, n: int, max_tokens: int = 256,
                 temperature: float = 0.7, top_logprobs: int = 5) -> list[Completion]:
        keys = [self.cache_key(prompt, i, max_tokens, temperature, top_logprobs)
                for i in range(n)]
        paths = [self._path(k) for k in keys]
        if all(p.exists() for p in paths):
            return [completion_from_dict(json.loads(p.read_text(encoding="utf-8")))
                    for p in paths]
        fresh = self.inner.complete(prompt, n, max_tokens=max_tokens,
                                    temperature=temperature, top_logprobs=top_logprobs)
        for path, completion in zip(paths, fresh):
            # No sort_keys: top-5 maps keep their probability order so a
            # cache read-back is bit-identical to the fresh reply.
            path.write_text(json.dumps(completion_to_dict(completion), ensure_ascii=False),
                            encoding="utf-8")
        return fresh
