"""Bipartite assignment between decoder predictions and ground truths."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, giou


@dataclass(frozen=True)
class MatchWeights:
    """Composite matching-cost weights: classification, L1, GIoU."""

    c_cls: float = 2.0
    c_l1: float = 5.0
    c_giou: float = 2.0

    def __post_init__(self):
        if min(self.c_cls, self.c_l1, self.c_giou) < 0:
            raise ValueError("matching weights must be non-negative")


def build_cost_matrix(probs: np.ndarray, pred_boxes_norm: np.ndarray, gt: list,
                      w: MatchWeights, image_w: float, image_h: float,
                      category_order: list) -> np.ndarray:
    """cost(q, g) = c_cls * (-prob[q, cat(g)]) + c_l1 * L1 + c_giou * (1 - GIoU).

    probs: [N_q, M] calibrated probabilities, columns ordered per
    `category_order`. pred_boxes_norm: [N_q, 4] normalized cxcywh.
    gt: list of (category_id, BBox).
    """
    probs = np.asarray(probs, dtype=np.float64)
    pred_boxes_norm = np.asarray(pred_boxes_norm, dtype=np.float64)
    n_q = probs.shape[0]
    col_of = {c: j for j, c in enumerate(category_order)}
    cost = np.zeros((n_q, len(gt)))
    for gi, (cat, box) in enumerate(gt):
        if cat not in col_of:
            raise KeyError(f"ground-truth category {cat} not among prompt categories")
        tgt = np.array([box.cx / image_w, box.cy / image_h, box.w / image_w, box.h / image_h])
        for q in range(n_q):
            cx, cy, bw, bh = pred_boxes_norm[q]
            pb = BBox((cx - bw / 2) * image_w, (cy - bh / 2) * image_h,
                      max(bw, 1e-6) * image_w, max(bh, 1e-6) * image_h)
            l1 = float(np.abs(pred_boxes_norm[q] - tgt).sum())
            cost[q, gi] = (
                w.c_cls * (-probs[q, col_of[cat]])
                + w.c_l1 * l1
                + w.c_giou * (1.0 - giou(pb, box))
            )
    return cost


def hungarian(cost: np.ndarray):
    """Min-cost assignment of every column to a distinct row.

    Requires rows >= cols (query-based detection: predictions outnumber
    ground truths). Returns (pairs, total_cost); pairs sorted by column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return [], 0.0
    rows, cols = cost.shape
    if rows < cols:
        raise ValueError(f"hungarian needs rows >= cols, got {rows}x{cols}")
    r, c = linear_sum_assignment(cost)
    pairs = sorted(zip(r.tolist(), c.tolist()), key=lambda t: t[1])
    return pairs, float(cost[r, c].sum())


def brute_force_assign(cost: np.ndarray):
    """Exhaustive oracle; refuses more than 8 columns."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return [], 0.0
    rows, cols = cost.shape
    if cols > 8:
        raise ValueError("brute_force_assign capped at 8 columns")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(rows), cols):
        c = sum(cost[perm[j], j] for j in range(cols))
        if c < best_cost:
            best_cost = c
            best = [(perm[j], j) for j in range(cols)]
    return best, float(best_cost)
