"""HTTP workbench API: scene listing, raw pixel payloads, and
prompt-driven inference with visible suppression deltas."""

from __future__ import annotations

import dataclasses

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .dataengine import pixels_to_bytes
from .geometry import BBox
from .prompts import NEGATIVE, POSITIVE, EncodeError, VisualPrompt, encode_prompt, l2norm_np
from .scoring import (AUTO_SUGGESTED, USER_CURATED, MissingNegativesError,
                      nnc_probability, resolve_negative_boxes)
from .seeding import substream


class BoxIn(BaseModel):
    x: float
    y: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)

    def to_bbox(self) -> BBox:
        return BBox(self.x, self.y, self.w, self.h)


class InferRequest(BaseModel):
    image_id: int
    positive_box: BoxIn
    negative_boxes: list[BoxIn] = []
    mode: str = USER_CURATED
    beta: float = Field(default=0.3, ge=0.0, lt=1.0)
    indicator: int = Field(default=1, ge=0, le=1)
    score_threshold: float = Field(default=0.25, ge=0.0, le=1.0)
    seed: int = 0


class DetectionOut(BaseModel):
    x: float
    y: float
    w: float
    h: float
    score: float
    suppressed_delta: float


class InferResponse(BaseModel):
    image_id: int
    indicator: int
    beta: float
    mode: str
    negative_boxes_used: list[BoxIn]
    detections: list[DetectionOut]


def create_app(model, manifest) -> FastAPI:
    app = FastAPI(title="negdet workbench")

    def scene_or_404(image_id: int):
        try:
            return manifest.scene(image_id)
        except KeyError:
            raise HTTPException(404, f"unknown scene {image_id}")

    @app.get("/scenes")
    def scenes():
        val = set(manifest.val_ids)
        return [{
            "image_id": s.image_id,
            "width": s.width,
            "height": s.height,
            "split": "val" if s.image_id in val else "train",
            "categories": sorted(s.category_counts()),
        } for s in manifest.scenes]

    @app.get("/scenes/{image_id}/image")
    def scene_image(image_id: int):
        scene = scene_or_404(image_id)
        if scene.pixels is None:
            raise HTTPException(404, f"scene {image_id} has no rendered pixels")
        return Response(content=pixels_to_bytes(scene.pixels),
                        media_type="application/octet-stream")

    @app.get("/model/info")
    def model_info():
        cfg = dataclasses.asdict(model.cfg)
        return {
            "detector": cfg,
            "parameter_count": int(sum(p.data.size for p in model.parameters().values())),
            "num_scenes": len(manifest.scenes),
            "num_categories": len(manifest.categories),
            "modes": [USER_CURATED, AUTO_SUGGESTED],
        }

    @app.post("/infer", response_model=InferResponse)
    def infer(req: InferRequest):
        scene = scene_or_404(req.image_id)
        if scene.pixels is None:
            raise HTTPException(400, f"scene {req.image_id} has no rendered pixels")
        rng = substream(req.seed, "infer")
        try:
            neg_boxes = resolve_negative_boxes(
                req.mode, req.positive_box.to_bbox(),
                [b.to_bbox() for b in req.negative_boxes], rng,
                scene.width, scene.height, k=model.cfg.k_negatives)
        except MissingNegativesError as e:
            raise HTTPException(400, str(e))
        except ValueError as e:
            raise HTTPException(422, str(e))

        pyramid = model.encode_image(scene.pixels)
        try:
            pos_vec = l2norm_np(encode_prompt(
                VisualPrompt(-1, req.positive_box.to_bbox(), POSITIVE, scene.image_id),
                pyramid, model.prompt).data)
        except EncodeError as e:
            raise HTTPException(400, f"positive box unusable: {e}")
        neg_vecs, used = [], []
        for i, b in enumerate(neg_boxes):
            try:
                neg_vecs.append(l2norm_np(encode_prompt(
                    VisualPrompt(-1, b, NEGATIVE, scene.image_id), pyramid,
                    model.prompt, slot=i % model.prompt.k_negatives).data))
                used.append(b)
            except EncodeError:
                continue  # skip degenerate negatives instead of failing the call
        if req.mode == USER_CURATED and not neg_vecs:
            raise HTTPException(400, "every negative box was too small to encode")

        emb, boxes = model.decode(pyramid)[-1]
        q, bias = model.calibrated_queries(emb.data)
        s_pos = q @ pos_vec + bias
        # negatives are a relative penalty: no background-prior bias on them
        s_neg = q @ np.stack(neg_vecs).T if neg_vecs else np.zeros((q.shape[0], 0))
        probs = nnc_probability(s_pos, s_neg, req.indicator, req.beta)
        plain = nnc_probability(s_pos, s_neg, 0, req.beta)
        dets = []
        for qi in np.argsort(-probs):
            if probs[qi] < req.score_threshold:
                break
            cx, cy, bw, bh = boxes.data[qi]
            dets.append(DetectionOut(
                x=(cx - bw / 2) * scene.width, y=(cy - bh / 2) * scene.height,
                w=bw * scene.width, h=bh * scene.height,
                score=float(probs[qi]),
                suppressed_delta=float(plain[qi] - probs[qi])))
        return InferResponse(
            image_id=req.image_id, indicator=req.indicator, beta=req.beta,
            mode=req.mode,
            negative_boxes_used=[BoxIn(x=b.x, y=b.y, w=b.w, h=b.h) for b in used],
            detections=dets)

    return app
