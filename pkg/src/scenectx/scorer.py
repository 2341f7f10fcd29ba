"""Consistency scoring: mask each detected object in turn, ask the model how
plausible it is given the rest, and keep the minimum."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ScoringError, UsageError
from .model import ModelConfig, forward, masked_probs
from .scene_lang import N_SPECIAL

STRICT = "strict"
RELAX = "relax"
VARIANTS = (STRICT, RELAX)

# scoring work is split into fixed chunks of sentences so results never
# depend on how many workers share the chunks
CHUNK = 128


@dataclass(frozen=True)
class ConsistencyReport:
    tokens: tuple[int, ...]
    per_position: tuple[tuple[int, int, float], ...]  # (i, token, confidence)
    score: float
    variant: str
    k: int

    @property
    def argmin(self) -> int:
        return min(self.per_position, key=lambda r: (r[2], r[0]))[0]

    def to_json(self, scene_id=None) -> dict:
        return {
            "scene_id": scene_id,
            "variant": self.variant,
            "k": self.k,
            "score": self.score,
            "per_position": [{"i": i, "token": t, "confidence": c} for i, t, c in self.per_position],
        }


def topk_confidence(p: np.ndarray, t: int, k: int) -> float:
    """p[t] if t ranks within the k most probable tokens (ties: lower id first), else 0."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}", module="scorer")
    pt = p[t]
    rank = int(np.count_nonzero(p > pt)) + int(np.count_nonzero(p[:t] == pt))
    return float(pt) if rank < k else 0.0


def confidence(params, cfg: ModelConfig, tokens, mask, t: int, i: int, k: int | None = None) -> float:
    """Model confidence in token ``t`` at masked slot ``i``; 0 when outside the top-k list."""
    if mask[i] != 0:
        raise UsageError(f"position {i} is not masked", module="scorer")
    p = forward(params, cfg, tokens, mask)[i]
    return topk_confidence(p[N_SPECIAL:], t - N_SPECIAL, k or cfg.vocab_size)


def _category_mass(p_obj: np.ndarray, n_cells: int) -> np.ndarray:
    return p_obj.reshape(-1, n_cells).sum(axis=1)


def _position_confidence(p_obj: np.ndarray, t: int, variant: str, k: int, n_cells: int) -> float:
    """p_obj covers object tokens only (index = token - N_SPECIAL)."""
    if variant == STRICT:
        return topk_confidence(p_obj, t - N_SPECIAL, k)
    # mass is aggregated per category first; the top-k test then ranks categories
    return topk_confidence(_category_mass(p_obj, n_cells), (t - N_SPECIAL) // n_cells, k)


def _check(tokens, variant):
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}", module="scorer")
    if len(tokens) == 0:
        raise ScoringError("empty sentence has no positions to check")


def _score_chunk(params, cfg, sentences, variant, k):
    seqs, pos = [], []
    for s in sentences:
        for i in range(len(s)):
            seqs.append(s)
            pos.append(i)
    probs = masked_probs(params, cfg, seqs, pos)[:, N_SPECIAL:].astype(np.float64)
    # renormalize in double so float32 softmax roundoff cannot push mass past 1
    probs /= probs.sum(axis=1, keepdims=True)
    reports, row = [], 0
    for s in sentences:
        per = []
        score = 1.0
        for i, t in enumerate(s):
            r = _position_confidence(probs[row], t, variant, k, cfg.n_cells)
            row += 1
            per.append((i, int(t), r))
            score = min(score, r)
        reports.append(ConsistencyReport(tuple(int(t) for t in s), tuple(per), score, variant, k))
    return reports


def consistency_score(params, cfg: ModelConfig, tokens: Sequence[int], variant: str = STRICT, k: int | None = None):
    _check(tokens, variant)
    if len(tokens) > cfg.max_seq_len:
        raise ScoringError(f"sentence length {len(tokens)} exceeds max_seq_len {cfg.max_seq_len}")
    k = k or cfg.vocab_size
    return _score_chunk(params, cfg, [list(tokens)], variant, k)[0]


def consistency_score_strict(params, cfg, tokens, k=None) -> ConsistencyReport:
    return consistency_score(params, cfg, tokens, STRICT, k)


def consistency_score_relax(params, cfg, tokens, k=None) -> ConsistencyReport:
    return consistency_score(params, cfg, tokens, RELAX, k)


def score_batch(params, cfg: ModelConfig, sentences, variant: str = STRICT, k: int | None = None, workers: int = 1):
    """Score many sentences; returns a list aligned with the input.

    A sentence that cannot be scored yields its ``ScoringError`` in place of
    a report (the exception names the input index); the rest still run.
    """
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}", module="scorer")
    k = k or cfg.vocab_size
    out: list = [None] * len(sentences)
    good = []
    for idx, s in enumerate(sentences):
        if len(s) == 0:
            out[idx] = ScoringError(f"sentence {idx}: empty sentence has no positions to check")
        elif len(s) > cfg.max_seq_len:
            out[idx] = ScoringError(f"sentence {idx}: length {len(s)} exceeds max_seq_len {cfg.max_seq_len}")
        else:
            good.append(idx)
    chunks = [good[a : a + CHUNK] for a in range(0, len(good), CHUNK)]

    def run(chunk):
        return _score_chunk(params, cfg, [list(sentences[i]) for i in chunk], variant, k)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    for chunk, reps in zip(chunks, results):
        for i, rep in zip(chunk, reps):
            out[i] = rep
    return out


def write_reports(rows, path) -> None:
    """rows: dicts produced by ``ConsistencyReport.to_json`` plus any extra fields."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def read_reports(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
