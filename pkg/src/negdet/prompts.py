"""Visual prompt synthesis, encoding, and batch aggregation.

A prompt is a polarity-tagged box. Encoding samples a G x G grid of
bilinear feature taps per pyramid level, restricted so every tap's
bilinear support lies strictly inside the box (this is what makes the
locality guarantee exact), pools them with dot-product attention under a
learnable query, then refines through a self-attention layer and FFN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import BBox, JitterSpec, MILD_JITTER, STRONG_JITTER, jitter_box

POSITIVE = "positive"
NEGATIVE = "negative"


class EncodeError(RuntimeError):
    pass


class MissingCategoryError(KeyError):
    pass


@dataclass(frozen=True)
class VisualPrompt:
    category_id: int
    box: BBox
    polarity: str
    source_image_id: int

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")


@dataclass
class PromptEmbedding:
    category_id: int
    vector: np.ndarray  # [D]
    polarity: str


@dataclass
class PromptEncoderParams:
    """Learnable state + structural config of the prompt encoder."""

    dim: int
    k_negatives: int
    grid: int  # G: taps per axis per level
    levels: int
    tensors: dict = field(default_factory=dict)  # name -> Tensor

    @staticmethod
    def init(dim: int, k_negatives: int, feat_channels: int, grid: int = 4,
             levels: int = 3, rng: np.random.Generator | None = None,
             hidden: int | None = None) -> "PromptEncoderParams":
        rng = rng or np.random.default_rng(0)
        d, h = dim, hidden or 2 * dim
        sd = 1.0 / np.sqrt(d)

        def w(shape, scale=sd):
            return ad.parameter(rng.normal(0.0, scale, size=shape))

        # small query init keeps the pooled-feature pathway dominant at the
        # start; a large shared query otherwise swamps the (category-bearing)
        # feature signal and every prompt embedding collapses to one direction
        t = {
            "q_pos": w((1, d), 0.1),
            "q_neg": w((k_negatives, d), 0.1),
            "wq": w((d, d)),
            "feat_k": w((feat_channels, d), 1.0 / np.sqrt(feat_channels)),
            "feat_v": w((feat_channels, d), 3.0 / np.sqrt(feat_channels)),
            "wo": w((d, d)),
            "sv": w((d, d)),
            "so": w((d, d)),
            "ffn_w1": w((d, h)),
            "ffn_b1": ad.parameter(np.zeros(h)),
            "ffn_w2": w((h, d), 1.0 / np.sqrt(h)),
            "ffn_b2": ad.parameter(np.zeros(d)),
            "ln1_g": ad.parameter(np.ones(d)),
            "ln1_b": ad.parameter(np.zeros(d)),
            "ln2_g": ad.parameter(np.ones(d)),
            "ln2_b": ad.parameter(np.zeros(d)),
            # per-tap feature normalization: relu feature maps share a large
            # non-negative common component that otherwise dominates pooling
            # and drives every category's embedding toward one direction
            "tap_g": ad.parameter(np.ones(feat_channels)),
            "tap_b": ad.parameter(np.zeros(feat_channels)),
        }
        return PromptEncoderParams(d, k_negatives, grid, levels, t)

    def named(self, prefix: str = "prompt.") -> dict:
        return {prefix + k: v for k, v in self.tensors.items()}


def l2norm(v: Tensor, eps: float = 1e-12) -> Tensor:
    """Unit-normalize along the last axis (differentiable)."""
    sq = (v * v).sum(axis=-1, keepdims=True)
    return v * ad.power(sq + eps, -0.5)


def l2norm_np(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.sqrt((v * v).sum(axis=-1, keepdims=True) + eps)


# -- prompt generation ----------------------------------------------------

def generate_training_prompts(annotations, category_id: int, pos_spec: JitterSpec,
                              neg_spec: JitterSpec, k: int, rng: np.random.Generator,
                              image_w: float, image_h: float, image_id: int = -1):
    """One mild-jittered positive and k strong-jittered negatives.

    Each negative re-samples a ground-truth box of the category before
    jittering, enriching diversity.
    """
    boxes = [a.bbox for a in annotations if a.category_id == category_id]
    if not boxes:
        raise MissingCategoryError(f"category {category_id} absent from image")
    g = boxes[int(rng.integers(len(boxes)))]
    pos = VisualPrompt(category_id, jitter_box(g, pos_spec, rng, image_w, image_h),
                       POSITIVE, image_id)
    negs = []
    for _ in range(k):
        gi = boxes[int(rng.integers(len(boxes)))]
        negs.append(VisualPrompt(category_id, jitter_box(gi, neg_spec, rng, image_w, image_h),
                                 NEGATIVE, image_id))
    return pos, negs


# -- encoding --------------------------------------------------------------

def _level_grid(box: BBox, stride: float, level_w: int, level_h: int, g: int):
    """Tap coordinates whose bilinear support stays inside the box.

    Map coordinate of pixel p is p/stride - 0.5 (cell centers at pixel
    (c+0.5)*stride). Returns None when no cell center falls strictly
    inside the box at this level.
    """
    eps = 1e-9
    mx1, mx2 = box.x / stride - 0.5, box.x2 / stride - 0.5
    my1, my2 = box.y / stride - 0.5, box.y2 / stride - 0.5
    lx = np.ceil(mx1 + eps)
    hx = np.floor(mx2 - eps)
    ly = np.ceil(my1 + eps)
    hy = np.floor(my2 - eps)
    lx, ly = max(lx, 0.0), max(ly, 0.0)
    hx, hy = min(hx, level_w - 1.0), min(hy, level_h - 1.0)
    if hx < lx or hy < ly:
        return None
    xs = lx + (hx - lx) * (np.arange(g) + 0.5) / g
    ys = ly + (hy - ly) * (np.arange(g) + 0.5) / g
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def encode_prompt(prompt: VisualPrompt, pyramid, params: PromptEncoderParams,
                  slot: int = 0) -> Tensor:
    """Raw (unnormalized) [D] embedding of one prompt box.

    pyramid: object with `.levels` (list of [C,H,W] Tensors) and
    `.strides`. `slot` picks the negative query row for negative prompts.
    """
    if len(pyramid.levels) != params.levels:
        raise EncodeError(f"expected {params.levels} pyramid levels, got {len(pyramid.levels)}")
    t = params.tensors
    samples = []
    for level, stride in zip(pyramid.levels, pyramid.strides):
        _, h, w = level.shape
        pts = _level_grid(prompt.box, stride, w, h, params.grid)
        if pts is not None:
            samples.append(ad.bilinear_sample(level, pts))
    if not samples:
        raise EncodeError(f"box {prompt.box} degenerate at every pyramid level")
    feats = ad.concat(samples, axis=0)  # [n, C]
    feats = ad.layer_norm(feats, t["tap_g"], t["tap_b"])

    query_row = t["q_pos"] if prompt.polarity == POSITIVE else t["q_neg"][slot : slot + 1, :]
    q = ad.matmul(query_row, t["wq"])  # [1, D]
    keys = ad.matmul(feats, t["feat_k"])  # [n, D]
    vals = ad.matmul(feats, t["feat_v"])
    logits = ad.matmul(q, keys.T) * (1.0 / np.sqrt(params.dim))
    attn = ad.softmax(logits, axis=1)
    pooled = ad.matmul(ad.matmul(attn, vals), t["wo"])
    x = ad.layer_norm(query_row + pooled, t["ln1_g"], t["ln1_b"])
    # length-1 self-attention degenerates to its value path
    x = ad.layer_norm(x + ad.matmul(ad.matmul(x, t["sv"]), t["so"]), t["ln2_g"], t["ln2_b"])
    ffn = ad.matmul(ad.relu(ad.matmul(x, t["ffn_w1"]) + t["ffn_b1"]), t["ffn_w2"]) + t["ffn_b2"]
    return (x + ffn).reshape(params.dim)


# -- aggregation -----------------------------------------------------------

def aggregate_positives(per_category: dict) -> tuple:
    """Mean per category over batch images, then renormalized.

    per_category: category_id -> list of [D] vectors (numpy or Tensor
    data). Returns (matrix [M,D] numpy, category order).
    """
    order = sorted(per_category)
    rows = []
    for cid in order:
        vecs = per_category[cid]
        if not vecs:
            raise MissingCategoryError(f"no positive embeddings for category {cid}")
        arr = np.stack([v.data if isinstance(v, Tensor) else np.asarray(v) for v in vecs])
        rows.append(l2norm_np(arr.mean(axis=0)))
    return np.stack(rows), order


def aggregate_positives_graph(vecs: list) -> Tensor:
    """Graph-side mean + renorm of a list of [D] Tensors -> [1,D]."""
    stacked = ad.concat([v.reshape(1, -1) for v in vecs], axis=0)
    return l2norm(stacked.mean(axis=0, keepdims=True))


def select_topk_negatives(candidates: np.ndarray, anchor: np.ndarray, k: int) -> np.ndarray:
    """K most anchor-similar rows by dot product; ties -> lower index;
    output keeps ascending candidate order."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.shape[0] < k:
        raise ValueError(f"need >= {k} candidates, got {candidates.shape[0]}")
    sims = candidates @ np.asarray(anchor, dtype=np.float64)
    chosen = np.sort(np.argsort(-sims, kind="stable")[:k])
    return candidates[chosen]


def select_topk_indices(candidates: np.ndarray, anchor: np.ndarray, k: int) -> np.ndarray:
    sims = np.asarray(candidates) @ np.asarray(anchor)
    return np.sort(np.argsort(-sims, kind="stable")[:k])


# -- Visual-G bank ---------------------------------------------------------

@dataclass
class PromptBank:
    """Fixed per-category prompt embeddings used during evaluation/serving."""

    dim: int
    k_negatives: int
    categories: list  # category ids, row order
    positives: np.ndarray  # [M, D]
    negatives: np.ndarray  # [M, K, D]

    def row(self, category_id: int) -> int:
        return self.categories.index(category_id)


def build_visualg_prompts(manifest, category_id: int, n_images: int, k: int,
                          rng: np.random.Generator, encode_image, params: PromptEncoderParams,
                          neg_spec: JitterSpec = STRONG_JITTER, image_ids=None):
    """Fixed positive/negative rows for one category.

    Positives: unjittered ground-truth boxes from n_images sampled images
    (with replacement when the corpus is short), encoded and averaged.
    Negatives: k strong jitters per image, pooled, top-k most similar to
    the averaged positive.
    """
    pool = [i for i in (image_ids if image_ids is not None else manifest.train_ids)
            if any(a.category_id == category_id for a in manifest.scene(i).annotations)]
    if not pool:
        raise MissingCategoryError(f"category {category_id} absent from dataset")
    replace = len(pool) < n_images
    picks = rng.choice(len(pool), size=n_images, replace=replace)
    pos_vecs, neg_vecs = [], []
    for pi in picks:
        scene = manifest.scene(pool[int(pi)])
        pyramid = encode_image(scene)
        boxes = [a.bbox for a in scene.annotations if a.category_id == category_id]
        g = boxes[int(rng.integers(len(boxes)))]
        pos = VisualPrompt(category_id, g, POSITIVE, scene.image_id)
        pos_vecs.append(encode_prompt(pos, pyramid, params).data)
        for slot in range(k):
            # heavy shrink can leave a box covering no feature cell; re-draw
            for attempt in range(16):
                nb = jitter_box(g, neg_spec, rng, scene.width, scene.height)
                neg = VisualPrompt(category_id, nb, NEGATIVE, scene.image_id)
                try:
                    neg_vecs.append(l2norm_np(encode_prompt(neg, pyramid, params, slot=slot).data))
                    break
                except EncodeError:
                    if attempt == 15:
                        raise
    anchor = l2norm_np(np.stack(pos_vecs).mean(axis=0))
    negatives = select_topk_negatives(np.stack(neg_vecs), anchor, k) if k > 0 else np.zeros((0, params.dim))
    return anchor, negatives


def build_prompt_bank(manifest, encode_image, params: PromptEncoderParams,
                      n_images: int, k: int, rng: np.random.Generator,
                      categories=None) -> PromptBank:
    cats = sorted(categories if categories is not None else [c.id for c in manifest.categories])
    pos_rows, neg_rows = [], []
    for cid in cats:
        p, n = build_visualg_prompts(manifest, cid, n_images, k, rng, encode_image, params)
        pos_rows.append(p)
        neg_rows.append(n if k > 0 else np.zeros((0, params.dim)))
    return PromptBank(params.dim, k, cats, np.stack(pos_rows), np.stack(neg_rows))


def save_prompt_bank(bank: PromptBank, path) -> Path:
    doc = {
        "format_version": 1,
        "dim": bank.dim,
        "k_negatives": bank.k_negatives,
        "rows": [
            {
                "category_id": int(cid),
                "positive": bank.positives[i].tolist(),
                "negatives": bank.negatives[i].tolist(),
            }
            for i, cid in enumerate(bank.categories)
        ],
    }
    p = Path(path)
    p.write_text(json.dumps(doc, sort_keys=True))
    return p


def load_prompt_bank(path) -> PromptBank:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != 1:
        raise ValueError("unsupported prompt bank version")
    cats = [r["category_id"] for r in doc["rows"]]
    pos = np.array([r["positive"] for r in doc["rows"]])
    neg = np.array([r["negatives"] for r in doc["rows"]])
    return PromptBank(doc["dim"], doc["k_negatives"], cats, pos, neg)
