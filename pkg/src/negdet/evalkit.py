"""Evaluation: averaged-threshold AP, frequency-bucket slices, counting
error, and one-axis sweeps."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import paused_gc
from .dataengine import frequency_buckets
from .geometry import iou
from .prompts import build_prompt_bank
from .scoring import NNCConfig, infer_detections
from .seeding import substream

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
BUCKETS = ("rare", "common", "frequent")


@dataclass
class EvalResult:
    ap: float
    per_category: dict
    bucket_ap: dict  # only buckets that hold at least one evaluated category
    counting_mae: float
    num_images: int


def _category_ap(dets, gts_by_img, n_gt, thresholds):
    """dets: [(image_id, box, score)] one category; gts_by_img: img -> [BBox]."""
    if n_gt == 0:
        return None
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    recall_pts = np.linspace(0, 1, 101)
    aps = []
    for thr in thresholds:
        matched = {img: np.zeros(len(bs), dtype=bool) for img, bs in gts_by_img.items()}
        tp = np.zeros(len(dets))
        for rank, di in enumerate(order):
            img, box, _ = dets[di]
            best, hit = thr, None
            for gi, gbox in enumerate(gts_by_img.get(img, ())):
                if matched[img][gi]:
                    continue
                v = iou(box, gbox)
                if v >= best:
                    best, hit = v, gi
            if hit is not None:
                matched[img][hit] = True
                tp[rank] = 1
        tp_cum = np.cumsum(tp)
        fp_cum = np.cumsum(1 - tp)
        recalls = tp_cum / n_gt
        precisions = tp_cum / np.maximum(tp_cum + fp_cum, 1)
        # precision envelope sampled at the 101 canonical recall points
        env = precisions.copy()
        for i in range(len(env) - 2, -1, -1):
            env[i] = max(env[i], env[i + 1])
        if len(env) == 0:
            sampled = np.zeros_like(recall_pts)
        else:
            idx = np.searchsorted(recalls, recall_pts, side="left")
            sampled = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
        aps.append(float(sampled.mean()))
    return float(np.mean(aps))


def compute_ap(detections, gts, thresholds=IOU_THRESHOLDS):
    """Mean AP over categories with ground truth, averaged over IoU
    thresholds with 101-point interpolation.

    detections: [(image_id, category_id, box, score)]
    gts: [(image_id, category_id, box)]
    Returns (mean_ap, per_category dict). No ground truth at all -> 0.0.
    """
    cats = sorted({c for _, c, _ in gts})
    per_category = {}
    for cat in cats:
        gts_by_img: dict = {}
        for img, c, box in gts:
            if c == cat:
                gts_by_img.setdefault(img, []).append(box)
        n_gt = sum(len(v) for v in gts_by_img.values())
        dets = [(img, box, s) for img, c, box, s in detections if c == cat]
        per_category[cat] = _category_ap(dets, gts_by_img, n_gt, thresholds)
    if not per_category:
        return 0.0, {}
    return float(np.mean(list(per_category.values()))), per_category


def bucketed_ap(per_category: dict, buckets: dict) -> dict:
    """Mean AP per frequency bucket; buckets with no evaluated category
    are absent from the result, never reported as zero."""
    out: dict = {}
    for cid, ap in per_category.items():
        out.setdefault(buckets[cid], []).append(ap)
    return {b: float(np.mean(v)) for b, v in out.items()}


def counting_mae(detections, gts, score_threshold: float = 0.5) -> float:
    """Mean |predicted count - true count| over (image, category) pairs
    that appear in the ground truth."""
    true: dict = {}
    for img, c, _ in gts:
        true[(img, c)] = true.get((img, c), 0) + 1
    if not true:
        return 0.0
    pred: dict = {}
    for img, c, _, s in detections:
        if s >= score_threshold:
            pred[(img, c)] = pred.get((img, c), 0) + 1
    return float(np.mean([abs(pred.get(key, 0) - n) for key, n in true.items()]))


def evaluate(model, manifest, bank, nnc: NNCConfig, indicator: int,
             image_ids=None, score_threshold: float = 0.05,
             count_threshold: float = 0.5) -> EvalResult:
    """Run the detector over scenes and score against a fixed prompt bank."""
    ids = list(image_ids) if image_ids is not None else list(manifest.val_ids)
    detections, gts = [], []
    with paused_gc():
        for i in ids:
            scene = manifest.scene(i)
            emb, boxes = model.decode(model.encode_image(scene.pixels))[-1]
            q, bias = model.calibrated_queries(emb.data)
            dets = infer_detections(q, boxes.data, bank, nnc, indicator,
                                    scene.width, scene.height, score_threshold, bias=bias)
            detections += [(i, d.category_id, d.box, d.score) for d in dets]
            gts += [(i, a.category_id, a.bbox) for a in scene.annotations]
    ap, per_category = compute_ap(detections, gts)
    buckets = frequency_buckets(manifest, {"rare_max": manifest.config.rare_max,
                                           "common_max": manifest.config.common_max})
    return EvalResult(ap, per_category, bucketed_ap(per_category, buckets),
                      counting_mae(detections, gts, count_threshold), len(ids))


SWEEP_AXES = ("beta", "eta", "mode_policy")


def run_sweep(manifest, axis: str, values, detector_factory, train_fn, bank_fn,
              base_nnc: NNCConfig, seed: int, out_csv=None, indicator: int = 1):
    """Evaluate along one axis.

    beta is inference-time only: one model and bank are reused. eta and
    mode_policy alter training, so each value retrains from scratch.
    detector_factory(axis_value) -> fresh model; train_fn(model, axis_value);
    bank_fn(model) -> PromptBank.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    rows = []
    model = bank = None
    for v in values:
        if axis == "beta":
            if model is None:
                model = detector_factory(v)
                train_fn(model, v)
                bank = bank_fn(model)
            nnc = dataclasses.replace(base_nnc, beta=float(v))
        else:
            model = detector_factory(v)
            train_fn(model, v)
            bank = bank_fn(model)
            nnc = base_nnc
        res = evaluate(model, manifest, bank, nnc, indicator)
        rows.append({
            "axis": axis,
            "axis_value": v,
            "ap": res.ap,
            "ap_r": res.bucket_ap.get("rare", ""),
            "ap_c": res.bucket_ap.get("common", ""),
            "ap_f": res.bucket_ap.get("frequent", ""),
            "seed": seed,
        })
    if out_csv is not None:
        path = Path(out_csv)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["axis", "axis_value", "ap",
                                               "ap_r", "ap_c", "ap_f", "seed"])
            w.writeheader()
            w.writerows(rows)
    return rows


def default_bank_builder(model, manifest, n_images: int = 32, k: int = 3,
                         seed: int = 0):
    def encode_image(scene):
        return model.encode_image(scene.pixels)

    with paused_gc():
        return build_prompt_bank(manifest, encode_image, model.prompt, n_images, k,
                                 substream(seed, "eval"))
