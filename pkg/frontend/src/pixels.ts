/** Decoder for the service's raw pixel payload.
 *
 * Layout: magic "NDPX", three little-endian uint32 (channels, height,
 * width), then float32 planes in channel-major order, values in [0, 1].
 */

const MAGIC = "NDPX";

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA bytes ready for ImageData. */
  rgba: Uint8ClampedArray<ArrayBuffer>;
}

export function decodePixels(buf: ArrayBuffer): DecodedImage {
  const view = new DataView(buf);
  const magic = String.fromCharCode(view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3));
  if (magic !== MAGIC) throw new Error(`bad pixel payload magic ${magic}`);
  const c = view.getUint32(4, true);
  const h = view.getUint32(8, true);
  const w = view.getUint32(12, true);
  const planes = new Float32Array(buf, 16, c * h * w);
  const rgba = new Uint8ClampedArray(w * h * 4);
  for (let i = 0; i < w * h; i++) {
    for (let ch = 0; ch < 3; ch++) {
      // grayscale payloads broadcast their single channel
      const src = ch < c ? ch : c - 1;
      rgba[i * 4 + ch] = Math.round(255 * planes[src * h * w + i]!);
    }
    rgba[i * 4 + 3] = 255;
  }
  return { width: w, height: h, rgba };
}
