"""Similarity scoring and negative-suppressed probabilities.

A query embedding is scored against a positive prompt embedding and K
negative prompt embeddings by dot product. The detection probability is

    prob = sigmoid(s_pos - b * beta * max_i s_neg_i)

where b is a binary mode indicator. With b = 0 the negative term is
skipped entirely, so that path is bit-identical to plain
sigmoid(s_pos) and needs no retraining to toggle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import BBox, STRONG_JITTER, from_cxcywh_norm, jitter_box

MODE_POLICIES = ("fixed_0", "fixed_1", "bernoulli")

USER_CURATED = "user_curated"
AUTO_SUGGESTED = "auto_suggested"


class MissingNegativesError(ValueError):
    pass


@dataclass(frozen=True)
class NNCConfig:
    beta: float = 0.3
    mode_policy: str = "bernoulli"
    bernoulli_p: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.mode_policy not in MODE_POLICIES:
            raise ValueError(f"unknown mode policy {self.mode_policy!r}")
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ValueError(f"bernoulli_p must lie in [0, 1], got {self.bernoulli_p}")


@dataclass
class SimilarityScores:
    s_pos: np.ndarray  # [N]
    s_neg: np.ndarray  # [N, K]


@dataclass
class Detection:
    category_id: int
    score: float
    box: BBox
    suppressed_delta: float = 0.0


def sample_mode_indicator(cfg: NNCConfig, rng: np.random.Generator) -> int:
    if cfg.mode_policy == "fixed_0":
        return 0
    if cfg.mode_policy == "fixed_1":
        return 1
    return int(rng.random() < cfg.bernoulli_p)


def similarity(queries: np.ndarray, prompts: np.ndarray) -> np.ndarray:
    """Dot-product scores, queries [N,D] x prompts [M,D] -> [N,M]."""
    return np.asarray(queries, dtype=np.float64) @ np.asarray(prompts, dtype=np.float64).T


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def nnc_probability(s_pos, s_neg, indicator: int, beta: float) -> np.ndarray:
    """Suppressed probability per query.

    s_pos: [N]; s_neg: [N, K] (K may be 0). indicator 0 returns exactly
    sigmoid(s_pos): the suppression term is never formed.
    """
    s_pos = np.atleast_1d(np.asarray(s_pos, dtype=np.float64))
    if indicator not in (0, 1):
        raise ValueError(f"mode indicator must be 0 or 1, got {indicator}")
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if s_neg.ndim == 1:
        s_neg = np.broadcast_to(s_neg, (s_pos.shape[0], s_neg.shape[0]))
    if indicator == 0 or s_neg.shape[1] == 0:
        return _sigmoid(s_pos)
    return _sigmoid(s_pos - beta * s_neg.max(axis=1))


def nnc_probability_graph(s_pos: Tensor, s_neg: Tensor | None, indicator: int,
                          beta: float) -> Tensor:
    """Graph flavor of nnc_probability; s_pos [N], s_neg [N,K] or None."""
    if indicator == 0 or s_neg is None or s_neg.shape[1] == 0:
        return ad.sigmoid(s_pos)
    return ad.sigmoid(s_pos - ad.tmax(s_neg, axis=1) * beta)


def score_queries(query_embs: np.ndarray, positive: np.ndarray,
                  negatives: np.ndarray, bias: float = 0.0) -> SimilarityScores:
    """Scores of every query against one category's prompt set.

    positive [D]; negatives [K,D], K >= 0. `bias` calibrates the positive
    similarity only: it absorbs the background prior of the detection
    decision. Negative similarities act as a relative penalty and stay
    bias-free, so suppression strength tracks appearance similarity.
    """
    q = np.asarray(query_embs, dtype=np.float64)
    s_pos = q @ np.asarray(positive, dtype=np.float64) + bias
    neg = np.asarray(negatives, dtype=np.float64).reshape(-1, q.shape[1]) if np.size(negatives) else np.zeros((0, q.shape[1]))
    s_neg = q @ neg.T
    return SimilarityScores(s_pos, s_neg)


def resolve_negative_boxes(mode: str, positive_box: BBox, negative_boxes,
                           rng: np.random.Generator, image_w: float, image_h: float,
                           k: int = 3) -> list:
    """Negative prompt boxes for interactive inference.

    user_curated passes the caller's boxes through (empty -> error);
    auto_suggested draws k strong jitters of the positive box.
    """
    if mode == USER_CURATED:
        if not negative_boxes:
            raise MissingNegativesError("user_curated mode needs at least one negative box")
        return list(negative_boxes)
    if mode == AUTO_SUGGESTED:
        return [jitter_box(positive_box, STRONG_JITTER, rng, image_w, image_h)
                for _ in range(k)]
    raise ValueError(f"unknown prompt mode {mode!r}")


def infer_detections(query_embs: np.ndarray, boxes_norm: np.ndarray, bank,
                     cfg: NNCConfig, indicator: int, image_w: float, image_h: float,
                     score_threshold: float = 0.0, categories=None,
                     bias: float = 0.0) -> list:
    """Score every (query, category) pair against a prompt bank.

    Returns Detections sorted by descending score (ties: lower query index,
    then lower category id). suppressed_delta records how much the
    negative term removed: sigmoid(s_pos) - prob.
    """
    out = []
    cats = categories if categories is not None else bank.categories
    for cid in cats:
        r = bank.row(cid)
        sc = score_queries(query_embs, bank.positives[r], bank.negatives[r], bias)
        probs = nnc_probability(sc.s_pos, sc.s_neg, indicator, cfg.beta)
        plain = _sigmoid(sc.s_pos)
        for qi in range(len(probs)):
            if probs[qi] >= score_threshold:
                box = from_cxcywh_norm(boxes_norm[qi], image_w, image_h)
                out.append(Detection(cid, float(probs[qi]), box,
                                     float(plain[qi] - probs[qi])))
    out.sort(key=lambda d: (-d.score, d.category_id))
    return out
