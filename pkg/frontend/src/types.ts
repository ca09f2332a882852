/** Wire types shared with the inference service. */

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export type Polarity = "positive" | "negative";

export interface PromptBox extends Rect {
  polarity: Polarity;
  /** Display-only label; the embedding comes from the box itself. */
  label: string;
}

export const USER_CURATED = "user_curated";
export const AUTO_SUGGESTED = "auto_suggested";
export type PromptMode = typeof USER_CURATED | typeof AUTO_SUGGESTED;

/** Everything the user has drawn or dialed in for one scene. */
export interface PromptLayer {
  imageId: number;
  boxes: PromptBox[];
  mode: PromptMode;
  beta: number;
  scoreThreshold: number;
  seed: number;
}

export interface InferRequestBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface InferRequest {
  image_id: number;
  positive_box: InferRequestBox;
  negative_boxes: InferRequestBox[];
  mode: PromptMode;
  beta: number;
  indicator: number;
  score_threshold: number;
  seed: number;
}

export interface DetectionOut {
  x: number;
  y: number;
  w: number;
  h: number;
  score: number;
  suppressed_delta: number;
}

export interface InferResponse {
  image_id: number;
  indicator: number;
  beta: number;
  mode: string;
  negative_boxes_used: InferRequestBox[];
  detections: DetectionOut[];
}

export interface SceneInfo {
  image_id: number;
  width: number;
  height: number;
  split: string;
  categories: number[];
}
