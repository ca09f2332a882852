/** Thin fetch client for the workbench service.
 *
 * At most one inference request is in flight: submitting again aborts
 * the previous call, so the overlay always reflects the latest layer.
 */

import { inferRequestBody } from "./promptLayer.js";
import { InferResponse, PromptLayer, SceneInfo } from "./types.js";

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

export type FetchLike = typeof fetch;

export class WorkbenchClient {
  private inflight: AbortController | null = null;

  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  async listScenes(): Promise<SceneInfo[]> {
    const res = await this.fetchImpl(`${this.baseUrl}/scenes`);
    if (!res.ok) throw new ServiceError(res.status, await res.text());
    return (await res.json()) as SceneInfo[];
  }

  async sceneImage(imageId: number): Promise<ArrayBuffer> {
    const res = await this.fetchImpl(`${this.baseUrl}/scenes/${imageId}/image`);
    if (!res.ok) throw new ServiceError(res.status, await res.text());
    return res.arrayBuffer();
  }

  /** POST the layer's canonical request body. Cancels any in-flight call. */
  async infer(layer: PromptLayer, indicator = 1): Promise<InferResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const res = await this.fetchImpl(`${this.baseUrl}/infer`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: inferRequestBody(layer, indicator),
        signal: controller.signal,
      });
      if (!res.ok) throw new ServiceError(res.status, await res.text());
      return (await res.json()) as InferResponse;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}
