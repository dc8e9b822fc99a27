import { ApiError, ServiceClient } from "./api.js";
import { GazeCapture } from "./gazeCapture.js";
import { compositeOverlay, makeRaster, OverlayPoller, Raster } from "./overlay.js";
import { badgeClass, badgeModel, badgeTitle } from "./scrubber.js";
import type { OverlayLayer, SegmentResponse, SessionMeta, ViewerState } from "./types.js";
import { DEFAULT_SAMPLE_RATE_HZ } from "./types.js";
import {
  canvasToImage,
  DEFAULT_WINDOW,
  fitTransform,
  insideImage,
  planeToRgba,
  ViewTransform,
} from "./windowing.js";

const OVERLAY_POLL_MS = 250;

export class Viewer {
  private state: ViewerState;
  private meta: SessionMeta;
  private client: ServiceClient;
  private capture: GazeCapture;
  private poller: OverlayPoller;
  private transform: ViewTransform;
  private basePlane: Int16Array | null = null;
  private overlayRaster: Raster | null = null;
  private lastSummary: SegmentResponse | null = null;

  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private status: HTMLElement;
  private slider: HTMLInputElement;
  private badges: HTMLElement;

  constructor(root: HTMLElement, client: ServiceClient, meta: SessionMeta) {
    this.client = client;
    this.meta = meta;
    this.state = {
      sessionId: meta.id,
      slice: Math.floor(meta.slices / 2),
      sliceCount: meta.slices,
      windowCenter: DEFAULT_WINDOW.center,
      windowWidth: DEFAULT_WINDOW.width,
      layer: "heatmap",
      overlayAlpha: 0.55,
      captureOn: false,
      sampleRateHz: DEFAULT_SAMPLE_RATE_HZ,
    };

    this.canvas = root.querySelector("#view") as HTMLCanvasElement;
    this.ctx = this.canvas.getContext("2d")!;
    this.status = root.querySelector("#status") as HTMLElement;
    this.slider = root.querySelector("#slice") as HTMLInputElement;
    this.badges = root.querySelector("#badges") as HTMLElement;

    const [nx, ny] = meta.dims;
    this.transform = fitTransform(nx, ny, this.canvas.width, this.canvas.height);

    this.capture = new GazeCapture({
      rateHz: this.state.sampleRateHz,
      post: async (samples) => {
        await this.client.postGaze(this.state.sessionId, samples);
      },
      onSessionExpired: () => {
        this.state.captureOn = false;
        this.say("session expired; capture stopped");
      },
      onDroppedBatch: (n) => this.say(`dropped a gaze batch of ${n}`),
    });

    this.poller = new OverlayPoller({
      fetchOverlay: (slice, layer, etag) =>
        this.client.getOverlay(this.state.sessionId, slice, layer, etag),
      onFresh: (blob) => void this.applyOverlay(blob),
      onUnavailable: (status, layer) => {
        this.overlayRaster = null;
        this.repaint();
        if (status === 409) this.say(`${layer} layer not ready yet`);
      },
      intervalMs: OVERLAY_POLL_MS,
    });

    this.wire(root);
    this.slider.max = String(meta.slices - 1);
    this.slider.value = String(this.state.slice);
    void this.loadSlice();
    this.poller.start(() => ({ slice: this.state.slice, layer: this.state.layer }));
  }

  private say(text: string): void {
    this.status.textContent = text;
  }

  private wire(root: HTMLElement): void {
    this.canvas.addEventListener("pointermove", (ev) => {
      const rect = this.canvas.getBoundingClientRect();
      const cx = ((ev.clientX - rect.left) / rect.width) * this.canvas.width;
      const cy = ((ev.clientY - rect.top) / rect.height) * this.canvas.height;
      const [nx, ny] = this.meta.dims;
      if (insideImage(cx, cy, this.transform, nx, ny)) {
        const { x, y } = canvasToImage(cx, cy, this.transform);
        this.capture.setPointer({ x, y, slice: this.state.slice });
      } else {
        this.capture.setPointer(null);
      }
    });
    this.canvas.addEventListener("pointerleave", () => this.capture.setPointer(null));

    this.slider.addEventListener("input", () => {
      this.state.slice = Number(this.slider.value);
      this.overlayRaster = null;
      void this.loadSlice();
    });

    (root.querySelector("#layer") as HTMLSelectElement).addEventListener("change", (ev) => {
      this.state.layer = (ev.target as HTMLSelectElement).value as OverlayLayer;
      this.overlayRaster = null;
      this.poller.reset();
      this.repaint();
    });

    (root.querySelector("#capture") as HTMLInputElement).addEventListener("change", (ev) => {
      this.state.captureOn = (ev.target as HTMLInputElement).checked;
      if (this.state.captureOn) {
        this.capture.start();
        this.say("capturing pointer as gaze");
      } else {
        this.capture.stop();
        this.say(`capture off (${this.capture.sampleCount} samples so far)`);
      }
    });

    (root.querySelector("#segment") as HTMLButtonElement).addEventListener("click", () => {
      void this.runSegment();
    });

    (root.querySelector("#export") as HTMLAnchorElement).href = this.client.maskletUrl(
      this.state.sessionId,
    );
  }

  private async loadSlice(): Promise<void> {
    try {
      const { data } = await this.client.getSliceRaw(this.state.sessionId, this.state.slice);
      this.basePlane = data;
    } catch (err) {
      this.say(err instanceof ApiError ? err.message : String(err));
      this.basePlane = null;
    }
    this.repaint();
  }

  private async applyOverlay(blob: Blob): Promise<void> {
    const bmp = await createImageBitmap(blob);
    const off = document.createElement("canvas");
    off.width = bmp.width;
    off.height = bmp.height;
    const octx = off.getContext("2d")!;
    octx.drawImage(bmp, 0, 0);
    const img = octx.getImageData(0, 0, bmp.width, bmp.height);
    this.overlayRaster = { width: img.width, height: img.height, data: img.data };
    this.repaint();
  }

  private repaint(): void {
    const [nx, ny] = this.meta.dims;
    const base = makeRaster(nx, ny);
    if (this.basePlane) {
      base.data.set(
        planeToRgba(this.basePlane, {
          center: this.state.windowCenter,
          width: this.state.windowWidth,
        }),
      );
    }
    const composed =
      this.overlayRaster && this.state.overlayAlpha > 0
        ? compositeOverlay(base, this.overlayRaster, this.state.layer, this.state.overlayAlpha)
        : base;

    const img = new ImageData(nx, ny);
    img.data.set(composed.data);
    const off = document.createElement("canvas");
    off.width = nx;
    off.height = ny;
    off.getContext("2d")!.putImageData(img, 0, 0);

    this.ctx.imageSmoothingEnabled = false;
    this.ctx.fillStyle = "#111";
    this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    this.ctx.drawImage(
      off,
      this.transform.offsetX,
      this.transform.offsetY,
      nx * this.transform.scale,
      ny * this.transform.scale,
    );
  }

  private async runSegment(): Promise<void> {
    this.say("segmenting…");
    try {
      const summary = await this.client.segment(this.state.sessionId, "all_slices");
      this.lastSummary = summary;
      this.renderBadges();
      const diceText = summary.dice !== undefined ? `, dice ${summary.dice.toFixed(3)}` : "";
      this.say(
        `masklet: ${summary.tag_counts.segmented} segmented, ` +
          `${summary.tag_counts.interpolated} interpolated${diceText}`,
      );
    } catch (err) {
      this.say(err instanceof ApiError ? `segment failed: ${err.message}` : String(err));
    }
  }

  private renderBadges(): void {
    this.badges.innerHTML = "";
    if (!this.lastSummary) return;
    const model = badgeModel(this.lastSummary, this.state.sliceCount);
    for (const entry of model.entries) {
      const el = document.createElement("span");
      el.className = badgeClass(entry.tag);
      el.title = badgeTitle(entry);
      el.addEventListener("click", () => {
        this.slider.value = String(entry.slice);
        this.slider.dispatchEvent(new Event("input"));
      });
      this.badges.appendChild(el);
    }
  }
}
