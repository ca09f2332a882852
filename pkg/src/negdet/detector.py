"""Query-based detector: conv pyramid, transformer decoder, prompt-scored
classification, and the training loop that ties suppression into it.

Classification is never a fixed category head: each decoder query is
scored by dot product against the batch's prompt embeddings, so the
detector remains open-set.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import (BBox, DegenerateJitterError, MILD_JITTER, STRONG_JITTER,
                       jitter_box, to_cxcywh_norm)
from .losses import (FocalConfig, LossWeights, NNHConfig, focal_loss_graph,
                     giou_loss_graph, l1_box_loss_graph, nnh_loss_graph, total_loss)
from .matching import MatchWeights, build_cost_matrix, hungarian
from .prompts import (EncodeError, PromptEncoderParams, VisualPrompt, POSITIVE,
                      aggregate_positives_graph, encode_prompt, l2norm, l2norm_np,
                      generate_training_prompts)
from .scoring import NNCConfig, nnc_probability_graph, sample_mode_indicator
from .seeding import substream

CHECKPOINT_MAGIC = b"NDCP"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class FeaturePyramid:
    levels: list  # [C, H, W] Tensors, fine to coarse
    strides: list


@dataclass(frozen=True)
class DetectorConfig:
    image_size: int = 64
    channels: int = 32
    dim: int = 64
    num_queries: int = 20
    decoder_layers: int = 2
    strides: tuple = (2, 4, 8)
    grid: int = 4
    k_negatives: int = 3
    ffn_hidden: int = 128

    def __post_init__(self):
        if self.num_queries < 1 or self.decoder_layers < 1:
            raise ValueError("need at least one query and one decoder layer")
        for s in self.strides:
            if self.image_size % s:
                raise ValueError(f"stride {s} does not divide image size {self.image_size}")


def sinusoidal_positions(shapes, dim: int) -> np.ndarray:
    """2D sine/cosine position codes for flattened pyramid cells.

    shapes: [(H, W)] per level. Returns [sum(H*W), dim].
    """
    if dim % 4:
        raise ValueError("positional dim must be divisible by 4")
    quarter = dim // 4
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / quarter))
    rows = []
    for h, w in shapes:
        u = (np.arange(w) + 0.5) / w
        v = (np.arange(h) + 0.5) / h
        gu, gv = np.meshgrid(u, v)
        au = gu.reshape(-1, 1) * freqs * 2 * np.pi
        av = gv.reshape(-1, 1) * freqs * 2 * np.pi
        rows.append(np.concatenate([np.sin(au), np.cos(au), np.sin(av), np.cos(av)], axis=1))
    return np.concatenate(rows, axis=0)


class Detector:
    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        c, d, h = cfg.channels, cfg.dim, cfg.ffn_hidden
        t: dict = {}

        def w(name, shape, scale):
            t[name] = ad.parameter(rng.normal(0.0, scale, size=shape), name=name)

        def zeros(name, shape):
            t[name] = ad.parameter(np.zeros(shape), name=name)

        def pre_relu_bias(name, shape):
            # small positive offset so units whose inputs are all zero
            # (relu-dead tokens) do not sit exactly on the next relu kink,
            # where the subgradient is ill-defined
            t[name] = ad.parameter(np.full(shape, 0.01), name=name)

        def ones(name, shape):
            t[name] = ad.parameter(np.ones(shape), name=name)

        in_ch = 3
        for i in range(len(cfg.strides)):
            w(f"backbone.conv{i}_w", (c, in_ch, 3, 3), 1.0 / np.sqrt(in_ch * 9))
            pre_relu_bias(f"backbone.conv{i}_b", (c,))
            in_ch = c

        sd = 1.0 / np.sqrt(d)
        w("decoder.query_embed", (cfg.num_queries, d), 1.0)
        w("decoder.feat_proj", (c, d), 1.0 / np.sqrt(c))
        pre_relu_bias("decoder.feat_proj_b", (d,))
        for l in range(cfg.decoder_layers):
            p = f"decoder.l{l}."
            for nm in ("sa_q", "sa_k", "sa_v", "sa_o", "ca_q", "ca_k", "ca_v", "ca_o"):
                w(p + nm, (d, d), sd)
            w(p + "ffn_w1", (d, h), sd)
            pre_relu_bias(p + "ffn_b1", (h,))
            w(p + "ffn_w2", (h, d), 1.0 / np.sqrt(h))
            zeros(p + "ffn_b2", (d,))
            for nm in ("ln1", "ln2", "ln3"):
                ones(p + nm + "_g", (d,))
                zeros(p + nm + "_b", (d,))
        # appearance shortcut: features sampled inside each predicted box feed
        # the query embedding directly, so query/prompt similarity compares
        # box appearance with box appearance from the first step of training
        w("decoder.roi_proj", (c, d), 1.0 / np.sqrt(c))
        ones("decoder.roi_g", (c,))
        zeros("decoder.roi_b", (c,))
        w("decoder.box_w1", (d, d), sd)
        zeros("decoder.box_b1", (d,))
        w("decoder.box_w2", (d, 4), sd)
        zeros("decoder.box_b2", (4,))
        # similarity calibration: S = scale * (q_hat . v) + bias on unit-norm
        # queries; the bias absorbs the background prior so prompt embeddings
        # don't have to encode it in a shared direction
        t["decoder.logit_scale"] = ad.parameter(np.array([10.0]), name="decoder.logit_scale")
        t["decoder.logit_bias"] = ad.parameter(np.array([-2.0]), name="decoder.logit_bias")
        self.tensors = t
        self.prompt = PromptEncoderParams.init(d, cfg.k_negatives, c, grid=cfg.grid,
                                               levels=len(cfg.strides), rng=rng)
        shapes = [(cfg.image_size // s,) * 2 for s in cfg.strides]
        self._pos_codes = sinusoidal_positions(shapes, d)

    def parameters(self) -> dict:
        return dict(self.tensors, **self.prompt.named())

    def load_parameters(self, arrays: dict):
        params = self.parameters()
        if set(arrays) != set(params):
            missing = set(params) - set(arrays)
            extra = set(arrays) - set(params)
            raise CheckpointError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in arrays.items():
            p = params[name]
            if p.data.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}: {p.data.shape} vs {arr.shape}")
            p.data = np.array(arr, dtype=np.float64)

    # -- forward pieces ---------------------------------------------------

    def similarity_graph(self, emb: Tensor, prompts: Tensor,
                         include_bias: bool = True) -> Tensor:
        """Calibrated similarities [N, M] of query embeddings vs prompts.

        The additive bias absorbs the background prior of the positive
        detection decision; negative-prompt similarities are compared
        relatively and should be computed with include_bias=False.
        """
        qn = l2norm(emb)
        s = ad.matmul(qn, prompts.T) * self.tensors["decoder.logit_scale"]
        if include_bias:
            s = s + self.tensors["decoder.logit_bias"]
        return s

    def calibrated_queries(self, emb_data: np.ndarray):
        """(scaled unit-norm queries, additive bias) for numpy scoring paths."""
        scale = float(self.tensors["decoder.logit_scale"].data[0])
        bias = float(self.tensors["decoder.logit_bias"].data[0])
        return l2norm_np(emb_data) * scale, bias

    def encode_image(self, pixels) -> FeaturePyramid:
        x = ad.tensor(np.asarray(pixels, dtype=np.float64))
        levels = []
        for i in range(len(self.cfg.strides)):
            x = ad.relu(ad.conv2d(x, self.tensors[f"backbone.conv{i}_w"],
                                  self.tensors[f"backbone.conv{i}_b"], stride=2, pad=1))
            levels.append(x)
        return FeaturePyramid(levels, list(self.cfg.strides))

    def decode(self, pyramid: FeaturePyramid) -> list:
        """Per decoder layer: (query embeddings [N_q, D], boxes [N_q, 4])."""
        t = self.tensors
        d = self.cfg.dim
        flat = ad.concat([lv.reshape(lv.shape[0], -1).T for lv in pyramid.levels], axis=0)
        mem = ad.relu(ad.matmul(flat, t["decoder.feat_proj"]) + t["decoder.feat_proj_b"])
        mem_pos = mem + self._pos_codes
        scale = 1.0 / np.sqrt(d)
        x = t["decoder.query_embed"]
        out = []
        for l in range(self.cfg.decoder_layers):
            p = f"decoder.l{l}."
            q = ad.matmul(x, t[p + "sa_q"])
            k = ad.matmul(x, t[p + "sa_k"])
            v = ad.matmul(x, t[p + "sa_v"])
            sa = ad.matmul(ad.matmul(ad.softmax(ad.matmul(q, k.T) * scale, axis=1), v),
                           t[p + "sa_o"])
            x = ad.layer_norm(x + sa, t[p + "ln1_g"], t[p + "ln1_b"])
            q = ad.matmul(x, t[p + "ca_q"])
            k = ad.matmul(mem_pos, t[p + "ca_k"])
            v = ad.matmul(mem, t[p + "ca_v"])
            ca = ad.matmul(ad.matmul(ad.softmax(ad.matmul(q, k.T) * scale, axis=1), v),
                           t[p + "ca_o"])
            x = ad.layer_norm(x + ca, t[p + "ln2_g"], t[p + "ln2_b"])
            ffn = ad.matmul(ad.relu(ad.matmul(x, t[p + "ffn_w1"]) + t[p + "ffn_b1"]),
                            t[p + "ffn_w2"]) + t[p + "ffn_b2"]
            x = ad.layer_norm(x + ffn, t[p + "ln3_g"], t[p + "ln3_b"])
            boxes = ad.sigmoid(ad.matmul(ad.relu(ad.matmul(x, t["decoder.box_w1"])
                                                 + t["decoder.box_b1"]),
                                         t["decoder.box_w2"]) + t["decoder.box_b2"])
            emb = x + self._box_features(pyramid, boxes)
            out.append((emb, boxes))
        return out

    def _box_features(self, pyramid: FeaturePyramid, boxes: Tensor) -> Tensor:
        """Mean of five bilinear taps (center + quarter offsets) inside each
        predicted box on the finest level, normalized and projected to D.
        Fully differentiable, sample coordinates included."""
        t = self.tensors
        level, stride = pyramid.levels[0], pyramid.strides[0]
        c, h, w = level.shape
        size = self.cfg.image_size
        cx, cy = boxes[:, 0] * size, boxes[:, 1] * size
        bw, bh = boxes[:, 2] * size, boxes[:, 3] * size
        cols = []
        for ox, oy in ((0.0, 0.0), (-0.25, -0.25), (0.25, -0.25),
                       (-0.25, 0.25), (0.25, 0.25)):
            px = (cx + bw * ox) * (1.0 / stride) - 0.5
            py = (cy + bh * oy) * (1.0 / stride) - 0.5
            px = ad.minimum(ad.maximum(px, 0.0), w - 1.0)
            py = ad.minimum(ad.maximum(py, 0.0), h - 1.0)
            cols.append(ad.concat([px.reshape(-1, 1), py.reshape(-1, 1)], axis=1))
        pts = ad.concat(cols, axis=0)  # [5*N_q, 2]
        taps = ad.bilinear_sample(level, pts)  # [5*N_q, C]
        pooled = taps.reshape(5, -1, c).mean(axis=0)
        pooled = ad.layer_norm(pooled, t["decoder.roi_g"], t["decoder.roi_b"])
        return ad.matmul(pooled, t["decoder.roi_proj"])


# -- training -------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 60
    batch_size: int = 6
    lr_backbone: float = 2e-4
    lr_others: float = 2e-3
    weight_decay: float = 1e-4
    grad_clip: float = 5.0
    seed: int = 0
    k_negatives: int = 3
    suppressed_match_cost: bool = False
    nnc: NNCConfig = field(default_factory=NNCConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    nnh: NNHConfig = field(default_factory=NNHConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    match: MatchWeights = field(default_factory=MatchWeights)


@dataclass
class TrainPlan:
    """Frozen randomness of one step: prompts, indicator, and (once
    computed) the assignment, so a re-run is exactly repeatable."""

    indicator: int
    prompts: list  # per scene: (positive VisualPrompt, [negative VisualPrompt])
    matches: list | None = None  # per scene: [(query, gt)]
    neg_top: np.ndarray | None = None  # indices of the selected negatives
    # per scene, per decoder layer: the negative-similarity values used for
    # probability calibration. Frozen like `matches`: suppression shifts the
    # probabilities but is not itself a learning signal (the hinge is), so a
    # replayed plan treats these as constants.
    neg_scores: list | None = None


def _prompts_with_retry(scene, category, k, rng, tries: int = 16):
    for attempt in range(tries):
        try:
            return generate_training_prompts(
                scene.annotations, category, MILD_JITTER, STRONG_JITTER, k, rng,
                scene.width, scene.height, image_id=scene.image_id)
        except DegenerateJitterError:
            if attempt == tries - 1:
                raise
    raise RuntimeError("unreachable")


def _encode_with_retry(model, prompt, pyramid, rng, scene, slot=0, tries: int = 16):
    for attempt in range(tries):
        try:
            return encode_prompt(prompt, pyramid, model.prompt, slot=slot)
        except EncodeError:
            if attempt == tries - 1:
                raise
            spec = MILD_JITTER if prompt.polarity == POSITIVE else STRONG_JITTER
            gt_boxes = [a.bbox for a in scene.annotations if a.category_id == prompt.category_id]
            g = gt_boxes[int(rng.integers(len(gt_boxes)))]
            prompt = VisualPrompt(prompt.category_id,
                                  jitter_box(g, spec, rng, scene.width, scene.height),
                                  prompt.polarity, prompt.source_image_id)
    raise RuntimeError("unreachable")


def forward_train(model: Detector, scenes: list, category: int, tcfg: TrainConfig,
                  rng_jitter: np.random.Generator, rng_mode: np.random.Generator,
                  plan: TrainPlan | None = None):
    """Loss over a shared-category batch.

    Returns (loss Tensor, metrics dict, plan). Passing the returned plan
    back reproduces the run bit-for-bit, matching included.
    """
    # the model owns only cfg.k_negatives negative query slots
    k = min(tcfg.k_negatives, model.cfg.k_negatives)
    if plan is None:
        plan = TrainPlan(
            indicator=sample_mode_indicator(tcfg.nnc, rng_mode),
            prompts=[_prompts_with_retry(s, category, k, rng_jitter) for s in scenes],
        )
    pyramids = [model.encode_image(s.pixels) for s in scenes]

    pos_vecs, neg_vecs = [], []
    for scene, pyr, (pos, negs) in zip(scenes, pyramids, plan.prompts):
        pos_vecs.append(_encode_with_retry(model, pos, pyr, rng_jitter, scene))
        for slot, n in enumerate(negs):
            neg_vecs.append(l2norm(
                _encode_with_retry(model, n, pyr, rng_jitter, scene, slot=slot).reshape(1, -1)))
    v_pos = aggregate_positives_graph(pos_vecs)  # [1, D]
    if k > 0:
        stacked = ad.concat(neg_vecs, axis=0)  # [B*K, D]
        if plan.neg_top is None:
            sims = stacked.data @ v_pos.data.reshape(-1)
            plan.neg_top = np.sort(np.argsort(-sims, kind="stable")[:k])
        v_neg = ad.concat([stacked[int(i)].reshape(1, -1) for i in plan.neg_top], axis=0)
    else:
        v_neg = None

    compute_matches = plan.matches is None
    if compute_matches:
        plan.matches = []
        plan.neg_scores = []
    loss_parts = {"cls": None, "hinge": None, "l1": None, "giou": None}

    def acc(key, term):
        loss_parts[key] = term if loss_parts[key] is None else loss_parts[key] + term

    total_matched = 0
    for si, (scene, pyr) in enumerate(zip(scenes, pyramids)):
        layers = model.decode(pyr)
        gt = [(category, a.bbox) for a in scene.annotations if a.category_id == category]
        targets = np.stack([to_cxcywh_norm(b, scene.width, scene.height) for _, b in gt])

        if compute_matches:
            scene_scores = []
            plan.neg_scores.append(scene_scores)
        else:
            scene_scores = plan.neg_scores[si]

        per_layer = []
        for li, (emb, boxes) in enumerate(layers):
            s_pos = model.similarity_graph(emb, v_pos).reshape(-1)
            s_neg = (model.similarity_graph(emb, v_neg, include_bias=False)
                     if v_neg is not None else None)
            # suppression acts as a probability calibration: the jitter
            # negatives steer the values while embedding learning flows
            # through the hinge. The values are frozen in the plan (like the
            # assignment), keeping per-step jitter noise out of the
            # classification gradients in joint mode.
            if compute_matches:
                scene_scores.append(None if s_neg is None else s_neg.data.copy())
            vals = scene_scores[li]
            s_neg_c = ad.tensor(vals) if vals is not None else None
            probs = nnc_probability_graph(s_pos, s_neg_c, plan.indicator, tcfg.nnc.beta)
            per_layer.append((s_pos, s_neg, probs, boxes))

        if compute_matches:
            s_pos, s_neg, probs, boxes = per_layer[-1]
            # match on the unsuppressed probabilities by default: assignments
            # then do not churn with each step's negative jitter draw
            cost_probs = probs.data if tcfg.suppressed_match_cost else ad.sigmoid(s_pos).data
            cost = build_cost_matrix(cost_probs[:, None], boxes.data, gt, tcfg.match,
                                     scene.width, scene.height, [category])
            plan.matches.append(hungarian(cost)[0])
        pairs = plan.matches[si]
        qidx = np.array([q for q, _ in pairs], dtype=int)
        gidx = np.array([g for _, g in pairs], dtype=int)
        total_matched += len(pairs)

        pos_mask = np.zeros(model.cfg.num_queries)
        pos_mask[qidx] = 1.0
        for s_pos, s_neg, probs, boxes in per_layer:
            acc("cls", focal_loss_graph(probs, pos_mask, tcfg.focal))
            if len(pairs):
                acc("l1", l1_box_loss_graph(boxes[qidx], targets[gidx]))
                acc("giou", giou_loss_graph(boxes[qidx], targets[gidx]))
                if v_neg is not None:
                    # hinge margins compare like with like: re-add the bias so
                    # eta keeps its meaning as a pure similarity margin
                    s_neg_b = s_neg[qidx] + model.tensors["decoder.logit_bias"]
                    acc("hinge", nnh_loss_graph(s_pos[qidx], s_neg_b, tcfg.nnh))

    norm = 1.0 / max(total_matched, 1)
    components = {key: t * norm for key, t in loss_parts.items() if t is not None}
    loss = total_loss(components, tcfg.weights)
    metrics = {"loss": float(loss.data), "indicator": plan.indicator,
               "matched": total_matched}
    for key, t in components.items():
        metrics[f"loss_{key}"] = float(t.data)
    return loss, metrics, plan


class AdamW:
    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        # groups: list of (params dict name->Tensor, lr)
        self.groups = [(dict(p), lr) for p, lr in groups]
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for ps, _ in self.groups for n, p in ps.items()}
        self.v = {n: np.zeros_like(p.data) for ps, _ in self.groups for n, p in ps.items()}

    def zero_grad(self):
        for ps, _ in self.groups:
            for p in ps.values():
                p.zero_grad()

    def clip_grad_norm(self, max_norm: float) -> float:
        total = 0.0
        tensors = [p for ps, _ in self.groups for p in ps.values() if p.grad is not None]
        for p in tensors:
            total += float((p.grad ** 2).sum())
        norm = np.sqrt(total)
        if norm > max_norm > 0:
            scale = max_norm / (norm + 1e-12)
            for p in tensors:
                p.grad *= scale
        return float(norm)

    def step(self):
        self.t += 1
        bc1 = 1 - self.b1 ** self.t
        bc2 = 1 - self.b2 ** self.t
        for ps, lr in self.groups:
            for n, p in ps.items():
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
                self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
                p.data -= lr * (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + self.eps)
                p.data -= lr * self.wd * p.data


def make_optimizer(model: Detector, tcfg: TrainConfig) -> AdamW:
    params = model.parameters()
    backbone = {n: p for n, p in params.items() if n.startswith("backbone.")}
    others = {n: p for n, p in params.items() if not n.startswith("backbone.")}
    return AdamW([(backbone, tcfg.lr_backbone), (others, tcfg.lr_others)],
                 weight_decay=tcfg.weight_decay)


def train(model: Detector, manifest, tcfg: TrainConfig, log=None) -> list:
    """Shared-category batch SGD; returns per-step metrics."""
    from .dataengine import build_category_index, construct_batch

    rng_data = substream(tcfg.seed, "data")
    rng_jit = substream(tcfg.seed, "jitter")
    rng_mode = substream(tcfg.seed, "mode")
    index = build_category_index(manifest)
    opt = make_optimizer(model, tcfg)
    history = []
    with ad.paused_gc():
        for step in range(tcfg.steps):
            ids, link = construct_batch(manifest, index, tcfg.batch_size, rng_data,
                                        log=log, return_link=True)
            scenes = [manifest.scene(i) for i in ids]
            opt.zero_grad()
            loss, metrics, _ = forward_train(model, scenes, link, tcfg, rng_jit, rng_mode)
            loss.backward()
            metrics["grad_norm"] = opt.clip_grad_norm(tcfg.grad_clip)
            opt.step()
            metrics["step"] = step
            metrics["category"] = link
            history.append(metrics)
            if log is not None:
                log(f"step {step}: loss {metrics['loss']:.4f} matched {metrics['matched']} "
                    f"b={metrics['indicator']}")
    return history


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(model: Detector, path) -> Path:
    body = bytearray()
    cfg_blob = json.dumps(dataclasses.asdict(model.cfg), sort_keys=True).encode()
    body += struct.pack("<II", CHECKPOINT_VERSION, len(cfg_blob))
    body += cfg_blob
    params = model.parameters()
    body += struct.pack("<I", len(params))
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        nb = name.encode()
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", data.ndim)
        body += struct.pack(f"<{data.ndim}I", *data.shape)
        body += data.tobytes()
    out = Path(path)
    out.write_bytes(CHECKPOINT_MAGIC + bytes(body)
                    + struct.pack("<I", zlib.crc32(bytes(body))))
    return out


def load_checkpoint(path, rng: np.random.Generator | None = None) -> Detector:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, (crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint payload corrupt (CRC mismatch)")
    off = 0
    version, cfg_len = struct.unpack_from("<II", body, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = DetectorConfig(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in json.loads(body[off:off + cfg_len]).items()})
    off += cfg_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
    model = Detector(cfg, rng or np.random.default_rng(0))
    model.load_parameters(arrays)
    return model
