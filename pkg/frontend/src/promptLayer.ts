/** PromptLayer state: box bookkeeping, validation, and the canonical
 * InferRequest serialization.
 *
 * The request body is produced by a single function with a fixed key
 * order, so saving a layer and restoring it later yields a
 * byte-identical body — the service sees no difference between a live
 * session and a restored one.
 */

import {
  AUTO_SUGGESTED,
  InferRequest,
  InferRequestBox,
  Polarity,
  PromptBox,
  PromptLayer,
  PromptMode,
  Rect,
  USER_CURATED,
} from "./types.js";

export const MIN_BOX_PIXELS = 4;

export function emptyLayer(imageId: number): PromptLayer {
  return {
    imageId,
    boxes: [],
    mode: AUTO_SUGGESTED,
    beta: 0.3,
    scoreThreshold: 0.25,
    seed: 0,
  };
}

/** Normalize a drag gesture (any corner order) into a rect. */
export function rectFromDrag(x0: number, y0: number, x1: number, y1: number): Rect {
  return {
    x: Math.min(x0, x1),
    y: Math.min(y0, y1),
    w: Math.abs(x1 - x0),
    h: Math.abs(y1 - y0),
  };
}

/** Clamp a rect to the image; returns null when nothing remains inside. */
export function clampRect(r: Rect, imageW: number, imageH: number): Rect | null {
  const x0 = Math.max(0, Math.min(r.x, imageW));
  const y0 = Math.max(0, Math.min(r.y, imageH));
  const x1 = Math.max(0, Math.min(r.x + r.w, imageW));
  const y1 = Math.max(0, Math.min(r.y + r.h, imageH));
  if (x1 - x0 <= 0 || y1 - y0 <= 0) return null;
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

export type AddBoxResult =
  | { ok: true; layer: PromptLayer }
  | { ok: false; hint: string };

/** Add a drawn box: clamps to the image, rejects slivers with a hint. */
export function addBox(
  layer: PromptLayer,
  rect: Rect,
  polarity: Polarity,
  imageW: number,
  imageH: number,
  label = "",
): AddBoxResult {
  const clamped = clampRect(rect, imageW, imageH);
  if (clamped === null) {
    return { ok: false, hint: "box lies outside the image" };
  }
  if (clamped.w < MIN_BOX_PIXELS || clamped.h < MIN_BOX_PIXELS) {
    return { ok: false, hint: `box must be at least ${MIN_BOX_PIXELS}px on each side` };
  }
  const box: PromptBox = { ...clamped, polarity, label };
  return { ok: true, layer: { ...layer, boxes: [...layer.boxes, box] } };
}

export function removeBox(layer: PromptLayer, index: number): PromptLayer {
  return { ...layer, boxes: layer.boxes.filter((_, i) => i !== index) };
}

export function positives(layer: PromptLayer): PromptBox[] {
  return layer.boxes.filter((b) => b.polarity === "positive");
}

export function negatives(layer: PromptLayer): PromptBox[] {
  return layer.boxes.filter((b) => b.polarity === "negative");
}

/** user_curated is only offered once a negative box exists. */
export function availableModes(layer: PromptLayer): PromptMode[] {
  return negatives(layer).length > 0 ? [AUTO_SUGGESTED, USER_CURATED] : [AUTO_SUGGESTED];
}

export function setMode(layer: PromptLayer, mode: PromptMode): PromptLayer {
  if (!availableModes(layer).includes(mode)) {
    throw new Error(`${mode} needs at least one negative box`);
  }
  return { ...layer, mode };
}

export function canInfer(layer: PromptLayer): boolean {
  return positives(layer).length > 0;
}

function wireBox(b: Rect): InferRequestBox {
  return { x: b.x, y: b.y, w: b.w, h: b.h };
}

/** Build the request object. The first positive box is the prompt;
 * negatives ride along only in user_curated mode (auto_suggested lets
 * the service synthesize its own). */
export function toInferRequest(layer: PromptLayer, indicator = 1): InferRequest {
  const pos = positives(layer);
  if (pos.length === 0) throw new Error("at least one positive box is required");
  return {
    image_id: layer.imageId,
    positive_box: wireBox(pos[0]!),
    negative_boxes: layer.mode === USER_CURATED ? negatives(layer).map(wireBox) : [],
    mode: layer.mode,
    beta: layer.beta,
    indicator,
    score_threshold: layer.scoreThreshold,
    seed: layer.seed,
  };
}

/** Canonical body: fixed key order comes from toInferRequest, so equal
 * layers always stringify to equal bytes. */
export function inferRequestBody(layer: PromptLayer, indicator = 1): string {
  return JSON.stringify(toInferRequest(layer, indicator));
}

export function serializeLayer(layer: PromptLayer): string {
  return JSON.stringify(layer);
}

export function restoreLayer(json: string): PromptLayer {
  const raw = JSON.parse(json) as PromptLayer;
  if (typeof raw.imageId !== "number" || !Array.isArray(raw.boxes)) {
    throw new Error("not a serialized prompt layer");
  }
  return raw;
}
