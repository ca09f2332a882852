/** Workbench entry point: wires the canvas, controls, and service
 * client together. The left canvas shows the current result; the right
 * canvas keeps the previous one for a before/after comparison. */

import { BoxTool } from "./canvasTool.js";
import { ServiceError, WorkbenchClient } from "./client.js";
import { diffDetections, drawDetections, drawPromptBox, STYLE } from "./overlay.js";
import { decodePixels, DecodedImage } from "./pixels.js";
import {
  addBox,
  availableModes,
  canInfer,
  emptyLayer,
  restoreLayer,
  serializeLayer,
} from "./promptLayer.js";
import { AUTO_SUGGESTED, InferResponse, PromptLayer, PromptMode, USER_CURATED } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const client = new WorkbenchClient("");
let layer: PromptLayer = emptyLayer(0);
let image: DecodedImage | null = null;
let current: InferResponse | null = null;
let previous: InferResponse | null = null;

const canvas = $<HTMLCanvasElement>("scene");
const beforeCanvas = $<HTMLCanvasElement>("before");
const ctx = canvas.getContext("2d")!;
const beforeCtx = beforeCanvas.getContext("2d")!;
const hintEl = $<HTMLElement>("hint");
const bannerEl = $<HTMLElement>("banner");
const diffEl = $<HTMLElement>("diff");

const tool = new BoxTool((rect, polarity) => {
  if (!image) return;
  const res = addBox(layer, rect, polarity, image.width, image.height,
    polarity === "positive" ? ($<HTMLInputElement>("label").value || "target") : "");
  if (res.ok) {
    layer = res.layer;
    hintEl.textContent = "";
  } else {
    hintEl.textContent = res.hint;
  }
  syncControls();
  render();
});

function drawBase(c: CanvasRenderingContext2D) {
  c.clearRect(0, 0, canvas.width, canvas.height);
  if (image) {
    c.putImageData(new ImageData(image.rgba, image.width, image.height), 0, 0);
  }
}

function render() {
  drawBase(ctx);
  for (const b of layer.boxes) drawPromptBox(ctx, b);
  const preview = tool.previewRect();
  if (preview) {
    ctx.save();
    ctx.setLineDash([4, 3]);
    ctx.strokeStyle = tool.polarity === "positive" ? STYLE.positive : STYLE.negative;
    ctx.strokeRect(preview.x, preview.y, preview.w, preview.h);
    ctx.restore();
  }
  if (current) drawDetections(ctx, current);

  drawBase(beforeCtx);
  if (previous) drawDetections(beforeCtx, previous, false);
  renderDiff();
}

function renderDiff() {
  if (!current || !previous) {
    diffEl.textContent = "";
    return;
  }
  const rows = diffDetections(previous.detections, current.detections)
    .map((d) => {
      if (d.before && d.after) return `kept: ${d.before.score.toFixed(3)} → ${d.after.score.toFixed(3)}`;
      if (d.before) return `gone: was ${d.before.score.toFixed(3)}`;
      return `new: ${d.after!.score.toFixed(3)}`;
    });
  diffEl.textContent = rows.join("\n");
}

function syncControls() {
  const modeSel = $<HTMLSelectElement>("mode");
  const modes = availableModes(layer);
  for (const opt of Array.from(modeSel.options)) {
    opt.disabled = !modes.includes(opt.value as PromptMode);
  }
  if (!modes.includes(layer.mode)) layer = { ...layer, mode: AUTO_SUGGESTED };
  modeSel.value = layer.mode;
  $<HTMLButtonElement>("run").disabled = !canInfer(layer);
}

async function run() {
  bannerEl.textContent = "";
  try {
    previous = current;
    current = await client.infer(layer);
  } catch (e) {
    if (e instanceof ServiceError) {
      bannerEl.textContent = `service error ${e.status}: ${e.message}`;
    } else {
      bannerEl.textContent = "service unreachable — check that it is running, then retry";
    }
  }
  render();
}

async function loadScene(imageId: number) {
  const buf = await client.sceneImage(imageId);
  image = decodePixels(buf);
  canvas.width = beforeCanvas.width = image.width;
  canvas.height = beforeCanvas.height = image.height;
  layer = emptyLayer(imageId);
  current = previous = null;
  syncControls();
  render();
}

async function init() {
  const scenes = await client.listScenes();
  const sel = $<HTMLSelectElement>("sceneSelect");
  for (const s of scenes) {
    const opt = document.createElement("option");
    opt.value = String(s.image_id);
    opt.textContent = `scene ${s.image_id} (${s.split}, ${s.categories.length} cats)`;
    sel.appendChild(opt);
  }
  sel.addEventListener("change", () => loadScene(Number(sel.value)));

  canvas.addEventListener("pointerdown", (e) => {
    const r = canvas.getBoundingClientRect();
    tool.pointerDown(e.clientX - r.left, e.clientY - r.top);
  });
  canvas.addEventListener("pointermove", (e) => {
    const r = canvas.getBoundingClientRect();
    tool.pointerMove(e.clientX - r.left, e.clientY - r.top);
    if (tool.active) render();
  });
  canvas.addEventListener("pointerup", (e) => {
    const r = canvas.getBoundingClientRect();
    tool.pointerUp(e.clientX - r.left, e.clientY - r.top);
  });
  window.addEventListener("keydown", (e) => {
    tool.keyDown(e.key);
    if (e.key === "Escape") render();
  });

  $<HTMLSelectElement>("tool").addEventListener("change", (e) => {
    tool.polarity = (e.target as HTMLSelectElement).value as "positive" | "negative";
  });
  $<HTMLSelectElement>("mode").addEventListener("change", (e) => {
    layer = { ...layer, mode: (e.target as HTMLSelectElement).value as PromptMode };
  });
  $<HTMLInputElement>("beta").addEventListener("input", (e) => {
    layer = { ...layer, beta: Number((e.target as HTMLInputElement).value) };
    $<HTMLElement>("betaVal").textContent = layer.beta.toFixed(2);
  });
  $<HTMLInputElement>("threshold").addEventListener("input", (e) => {
    layer = { ...layer, scoreThreshold: Number((e.target as HTMLInputElement).value) };
  });
  $<HTMLInputElement>("seed").addEventListener("change", (e) => {
    layer = { ...layer, seed: Number((e.target as HTMLInputElement).value) || 0 };
  });
  $<HTMLButtonElement>("run").addEventListener("click", run);
  $<HTMLButtonElement>("clear").addEventListener("click", () => {
    layer = { ...layer, boxes: [] };
    current = previous = null;
    syncControls();
    render();
  });
  $<HTMLButtonElement>("save").addEventListener("click", () => {
    localStorage.setItem("negdet-layer", serializeLayer(layer));
  });
  $<HTMLButtonElement>("restore").addEventListener("click", () => {
    const saved = localStorage.getItem("negdet-layer");
    if (saved) {
      layer = restoreLayer(saved);
      syncControls();
      render();
    }
  });

  if (scenes.length) {
    sel.value = String(scenes[0]!.image_id);
    await loadScene(scenes[0]!.image_id);
  }
}

init().catch((e) => {
  bannerEl.textContent = `failed to reach service: ${e}`;
});

export { USER_CURATED };
