import type { OverlayLayer } from "./types.js";
import type { OverlayResult } from "./api.js";

/** Minimal raster so compositing stays testable without a DOM canvas. */
export interface Raster {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA
}

export function makeRaster(width: number, height: number): Raster {
  return { width, height, data: new Uint8ClampedArray(width * height * 4) };
}

/** Compact perceptual ramp (dark violet -> red -> yellow), linear between stops. */
const RAMP_STOPS: Array<[number, number, number, number]> = [
  [0.0, 13, 8, 135],
  [0.25, 126, 3, 168],
  [0.5, 204, 71, 120],
  [0.75, 248, 149, 64],
  [1.0, 240, 249, 33],
];

export function heatRamp(v: number): [number, number, number] {
  const t = Math.min(1, Math.max(0, v));
  for (let i = 1; i < RAMP_STOPS.length; i++) {
    const [t1, r1, g1, b1] = RAMP_STOPS[i];
    if (t <= t1) {
      const [t0, r0, g0, b0] = RAMP_STOPS[i - 1];
      const f = (t - t0) / (t1 - t0);
      return [
        Math.round(r0 + f * (r1 - r0)),
        Math.round(g0 + f * (g1 - g0)),
        Math.round(b0 + f * (b1 - b0)),
      ];
    }
  }
  const last = RAMP_STOPS[RAMP_STOPS.length - 1];
  return [last[1], last[2], last[3]];
}

export const MASK_COLORS: Record<string, [number, number, number]> = {
  coarse: [64, 156, 255],
  segmentation: [46, 204, 113],
  interpolated: [241, 196, 15],
};

/** Alpha-blend a grayscale overlay (intensity in the R channel) onto the base.
 * Heatmaps map intensity through the color ramp; masks use one solid color.
 * Zero-intensity overlay pixels leave the base untouched. */
export function compositeOverlay(
  base: Raster,
  overlayGray: Raster,
  layer: OverlayLayer,
  alpha: number,
): Raster {
  if (base.width !== overlayGray.width || base.height !== overlayGray.height) {
    throw new Error(
      `overlay ${overlayGray.width}x${overlayGray.height} does not match base ${base.width}x${base.height}`,
    );
  }
  const out = makeRaster(base.width, base.height);
  out.data.set(base.data);
  if (alpha <= 0) return out;
  const maskColor = MASK_COLORS[layer] ?? MASK_COLORS.segmentation;
  for (let i = 0; i < base.width * base.height; i++) {
    const v = overlayGray.data[i * 4];
    if (v === 0) continue;
    let r: number, g: number, b: number, a: number;
    if (layer === "heatmap") {
      [r, g, b] = heatRamp(v / 255);
      a = alpha * (v / 255);
    } else {
      [r, g, b] = maskColor;
      a = alpha;
    }
    const o = i * 4;
    out.data[o] = Math.round(out.data[o] * (1 - a) + r * a);
    out.data[o + 1] = Math.round(out.data[o + 1] * (1 - a) + g * a);
    out.data[o + 2] = Math.round(out.data[o + 2] * (1 - a) + b * a);
    out.data[o + 3] = 255;
  }
  return out;
}

export interface OverlayPollerOptions {
  fetchOverlay: (slice: number, layer: OverlayLayer, etag?: string) => Promise<OverlayResult>;
  onFresh: (blob: Blob, slice: number, layer: OverlayLayer) => void;
  onUnavailable?: (status: number, layer: OverlayLayer) => void;
  intervalMs?: number; // 4 Hz default, matching the gaze batch cadence
  setIntervalFn?: typeof setInterval;
  clearIntervalFn?: typeof clearInterval;
}

/** ETag-driven refresher: repaints only when the service reports new bytes. */
export class OverlayPoller {
  private readonly opts: Required<Pick<OverlayPollerOptions, "fetchOverlay" | "onFresh">> &
    OverlayPollerOptions;
  private etags = new Map<string, string>();
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;
  repaintCount = 0;

  constructor(opts: OverlayPollerOptions) {
    this.opts = opts as OverlayPoller["opts"];
  }

  /** One conditional fetch; returns true when a repaint happened. */
  async poll(slice: number, layer: OverlayLayer): Promise<boolean> {
    if (this.inFlight) return false;
    this.inFlight = true;
    try {
      const key = `${slice}/${layer}`;
      const result = await this.opts.fetchOverlay(slice, layer, this.etags.get(key));
      if (result.status === 200 && result.blob) {
        if (result.etag) this.etags.set(key, result.etag);
        this.repaintCount += 1;
        this.opts.onFresh(result.blob, slice, layer);
        return true;
      }
      if (result.status !== 304) {
        this.opts.onUnavailable?.(result.status, layer);
      }
      return false;
    } finally {
      this.inFlight = false;
    }
  }

  /** Drop cached validators (e.g. after switching sessions). */
  reset(): void {
    this.etags.clear();
  }

  start(current: () => { slice: number; layer: OverlayLayer }): void {
    if (this.timer !== null) return;
    const setIntervalFn = this.opts.setIntervalFn ?? setInterval;
    this.timer = setIntervalFn(() => {
      const { slice, layer } = current();
      void this.poll(slice, layer);
    }, this.opts.intervalMs ?? 250);
  }

  stop(): void {
    if (this.timer !== null) {
      (this.opts.clearIntervalFn ?? clearInterval)(this.timer);
      this.timer = null;
    }
  }
}
