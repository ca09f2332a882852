/** Drag-to-draw gesture state machine for the annotation canvas.
 *
 * pointerdown starts a rectangle, pointermove resizes it, pointerup
 * commits it with the active tool's polarity, Escape cancels mid-drag.
 */

import { rectFromDrag } from "./promptLayer.js";
import { Polarity, Rect } from "./types.js";

export interface DragState {
  startX: number;
  startY: number;
  curX: number;
  curY: number;
}

export class BoxTool {
  polarity: Polarity = "positive";
  private drag: DragState | null = null;

  constructor(private onCommit: (rect: Rect, polarity: Polarity) => void) {}

  get active(): DragState | null {
    return this.drag;
  }

  /** Rect of the in-progress drag, for live preview rendering. */
  previewRect(): Rect | null {
    if (!this.drag) return null;
    return rectFromDrag(this.drag.startX, this.drag.startY, this.drag.curX, this.drag.curY);
  }

  pointerDown(x: number, y: number) {
    this.drag = { startX: x, startY: y, curX: x, curY: y };
  }

  pointerMove(x: number, y: number) {
    if (!this.drag) return;
    this.drag.curX = x;
    this.drag.curY = y;
  }

  pointerUp(x: number, y: number) {
    if (!this.drag) return;
    const rect = rectFromDrag(this.drag.startX, this.drag.startY, x, y);
    this.drag = null;
    this.onCommit(rect, this.polarity);
  }

  cancel() {
    this.drag = null;
  }

  keyDown(key: string) {
    if (key === "Escape") this.cancel();
  }
}
