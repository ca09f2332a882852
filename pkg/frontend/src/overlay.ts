/** Detection overlay rendering and the before/after diff.
 *
 * All numbers shown come straight from service responses; the client
 * never recomputes a score.
 */

import { DetectionOut, InferResponse, PromptBox, Rect } from "./types.js";

export const STYLE = {
  positive: "#2e8b57",
  negative: "#d9534f",
  detection: "#1e6fd9",
  faded: "#9bb7e0",
  badge: "#b05a00",
};

function rectIoU(a: Rect, b: Rect): number {
  const x0 = Math.max(a.x, b.x);
  const y0 = Math.max(a.y, b.y);
  const x1 = Math.min(a.x + a.w, b.x + b.w);
  const y1 = Math.min(a.y + a.h, b.y + b.h);
  const inter = Math.max(0, x1 - x0) * Math.max(0, y1 - y0);
  const union = a.w * a.h + b.w * b.h - inter;
  return union > 0 ? inter / union : 0;
}

export interface DetectionDiff {
  /** Detection from the previous result; null when newly appeared. */
  before: DetectionOut | null;
  /** Detection from the current result; null when it vanished. */
  after: DetectionOut | null;
  scoreChange: number;
}

/** Pair detections across two responses by greedy IoU (>= 0.5). */
export function diffDetections(
  before: DetectionOut[],
  after: DetectionOut[],
): DetectionDiff[] {
  const usedAfter = new Set<number>();
  const out: DetectionDiff[] = [];
  for (const b of before) {
    let bestJ = -1;
    let bestIoU = 0.5;
    after.forEach((a, j) => {
      if (usedAfter.has(j)) return;
      const v = rectIoU(a, b);
      if (v >= bestIoU) {
        bestIoU = v;
        bestJ = j;
      }
    });
    if (bestJ >= 0) {
      usedAfter.add(bestJ);
      const a = after[bestJ]!;
      out.push({ before: b, after: a, scoreChange: a.score - b.score });
    } else {
      out.push({ before: b, after: null, scoreChange: -b.score });
    }
  }
  after.forEach((a, j) => {
    if (!usedAfter.has(j)) out.push({ before: null, after: a, scoreChange: a.score });
  });
  return out;
}

export function formatScore(score: number): string {
  return score.toFixed(3);
}

export function badgeText(d: DetectionOut): string {
  return d.suppressed_delta > 0 ? `−${d.suppressed_delta.toFixed(3)}` : "";
}

function strokeRect(ctx: CanvasRenderingContext2D, r: Rect, color: string, width = 2) {
  ctx.save();
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.strokeRect(r.x, r.y, r.w, r.h);
  ctx.restore();
}

function labelAt(ctx: CanvasRenderingContext2D, x: number, y: number, text: string, color: string) {
  ctx.save();
  ctx.font = "12px sans-serif";
  const pad = 2;
  const w = ctx.measureText(text).width + 2 * pad;
  ctx.fillStyle = color;
  ctx.fillRect(x, Math.max(0, y - 14), w, 14);
  ctx.fillStyle = "#ffffff";
  ctx.fillText(text, x + pad, Math.max(11, y - 3));
  ctx.restore();
}

export function drawPromptBox(ctx: CanvasRenderingContext2D, box: PromptBox) {
  const color = box.polarity === "positive" ? STYLE.positive : STYLE.negative;
  strokeRect(ctx, box, color);
  if (box.polarity === "negative") {
    // negative style: diagonal slash so polarity reads without color
    ctx.save();
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(box.x, box.y);
    ctx.lineTo(box.x + box.w, box.y + box.h);
    ctx.stroke();
    ctx.restore();
  }
  if (box.label) labelAt(ctx, box.x, box.y, box.label, color);
}

export function drawDetections(
  ctx: CanvasRenderingContext2D,
  result: InferResponse,
  faded = false,
) {
  for (const d of result.detections) {
    strokeRect(ctx, d, faded ? STYLE.faded : STYLE.detection, faded ? 1 : 2);
    if (faded) continue;
    let text = formatScore(d.score);
    const badge = badgeText(d);
    if (badge) text += ` ${badge}`;
    labelAt(ctx, d.x, d.y, text, badge ? STYLE.badge : STYLE.detection);
  }
}
