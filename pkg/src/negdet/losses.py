"""Training objectives: focal classification on calibrated probabilities,
hinge margin separation, L1/GIoU box regression, and the weighted total.

Each loss comes in two flavors: a scalar API returning (value, analytic
gradient) for direct use and testing, and a graph flavor operating on
autodiff Tensors used inside the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not (0 <= self.alpha <= 1):
            raise ValueError("alpha must lie in [0,1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class NNHConfig:
    eta: float = 0.3

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 1.0
    w_hinge: float = 1.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    w_dn: float = 0.0  # denoising slot kept for shape, fixed off

    def __post_init__(self):
        for name in ("w_cls", "w_hinge", "w_l1", "w_giou", "w_dn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


# -- focal ---------------------------------------------------------------

def focal_loss(prob: float, is_positive: bool, cfg: FocalConfig = FocalConfig()):
    """-alpha_t (1 - p_t)^gamma log(p_t); returns (loss, dLoss/dProb)."""
    p = min(max(float(prob), PROB_CLAMP), 1 - PROB_CLAMP)
    p_t = p if is_positive else 1.0 - p
    a_t = cfg.alpha if is_positive else 1.0 - cfg.alpha
    one_m = 1.0 - p_t
    loss = -a_t * one_m**cfg.gamma * np.log(p_t)
    if cfg.gamma == 0:
        d_pt = -a_t / p_t
    else:
        d_pt = -a_t * (-cfg.gamma * one_m ** (cfg.gamma - 1) * np.log(p_t) + one_m**cfg.gamma / p_t)
    d_prob = d_pt if is_positive else -d_pt
    return float(loss), float(d_prob)


def focal_loss_graph(probs: Tensor, pos_mask: np.ndarray, cfg: FocalConfig) -> Tensor:
    """Sum of per-cell focal terms over a probability tensor.

    pos_mask is a constant 0/1 array of the same shape marking true cells.
    """
    m = np.asarray(pos_mask, dtype=np.float64)
    p = ad.minimum(ad.maximum(probs, PROB_CLAMP), 1 - PROB_CLAMP)
    p_t = p * m + (1.0 - p) * (1.0 - m)
    a_t = cfg.alpha * m + (1.0 - cfg.alpha) * (1.0 - m)
    terms = ad.mul(ad.mul(ad.power(1.0 - p_t, cfg.gamma), ad.log(p_t)), a_t)
    return -terms.sum()


# -- hinge ---------------------------------------------------------------

def nnh_loss(s_p: float, s_n, cfg: NNHConfig = NNHConfig()):
    """Mean hinge max(0, S_N,i - S_P + eta) / K.

    Returns (loss, grad_s_p, grad_s_n list). Subgradient 0 at exact kinks.
    """
    s_n = np.asarray(s_n, dtype=np.float64)
    if s_n.size == 0:
        raise ValueError("nnh_loss needs at least one negative similarity")
    margins = s_n - s_p + cfg.eta
    active = margins > 0
    loss = float(np.where(active, margins, 0.0).sum() / s_n.size)
    grad_p = -float(active.sum()) / s_n.size
    grad_n = active.astype(np.float64) / s_n.size
    return loss, grad_p, grad_n


def nnh_loss_graph(s_p: Tensor, s_n: Tensor, cfg: NNHConfig) -> Tensor:
    """Graph version; s_p shape [n], s_n shape [n, K]. Returns sum over n."""
    k = s_n.shape[-1]
    margins = ad.relu(s_n - ad.reshape(s_p, (-1, 1)) + cfg.eta)
    return margins.sum() * (1.0 / k)


# -- box regression ------------------------------------------------------

def l1_box_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    diff = pred - target
    return float(np.abs(diff).sum()), np.sign(diff)


def l1_box_loss_graph(pred: Tensor, target: np.ndarray) -> Tensor:
    return ad.tabs(pred - np.asarray(target, dtype=np.float64)).sum()


def giou_cxcywh_graph(pred: Tensor, target: np.ndarray) -> Tensor:
    """Per-row GIoU between predicted and constant target boxes.

    Both in cxcywh; pred w/h floored at 1e-6. Shapes [n,4] -> [n].
    """
    t = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    pw = ad.maximum(pred[:, 2], 1e-6)
    ph = ad.maximum(pred[:, 3], 1e-6)
    px1 = pred[:, 0] - pw * 0.5
    py1 = pred[:, 1] - ph * 0.5
    px2 = pred[:, 0] + pw * 0.5
    py2 = pred[:, 1] + ph * 0.5
    tx1, ty1 = t[:, 0] - t[:, 2] / 2, t[:, 1] - t[:, 3] / 2
    tx2, ty2 = t[:, 0] + t[:, 2] / 2, t[:, 1] + t[:, 3] / 2

    iw = ad.maximum(ad.minimum(px2, tx2) - ad.maximum(px1, tx1), 0.0)
    ih = ad.maximum(ad.minimum(py2, ty2) - ad.maximum(py1, ty1), 0.0)
    inter = iw * ih
    union = pw * ph + t[:, 2] * t[:, 3] - inter
    ew = ad.maximum(px2, tx2) - ad.minimum(px1, tx1)
    eh = ad.maximum(py2, ty2) - ad.minimum(py1, ty1)
    enclose = ew * eh
    return inter / union - (enclose - union) / enclose


def giou_loss(pred, target):
    """1 - GIoU on cxcywh 4-vectors; returns (loss, grad wrt pred)."""
    p = ad.parameter(np.asarray(pred, dtype=np.float64).reshape(1, 4))
    g = giou_cxcywh_graph(p, np.asarray(target, dtype=np.float64).reshape(1, 4))
    loss = (1.0 - g).sum()
    loss.backward()
    return float(loss.data), p.grad.reshape(4).copy()


def giou_loss_graph(pred: Tensor, target: np.ndarray) -> Tensor:
    return (1.0 - giou_cxcywh_graph(pred, target)).sum()


# -- total ---------------------------------------------------------------

def total_loss(components: dict, weights: LossWeights = LossWeights()):
    """Weighted Eq.-style sum; missing components count as zero.

    Works on plain floats or on graph Tensors transparently.
    """
    pairs = (
        ("cls", weights.w_cls),
        ("hinge", weights.w_hinge),
        ("l1", weights.w_l1),
        ("giou", weights.w_giou),
        ("dn", weights.w_dn),
    )
    total = None
    for key, w in pairs:
        if key not in components or w == 0:
            continue
        term = components[key] * w
        total = term if total is None else total + term
    if total is None:
        return 0.0
    return total
