import type { GazeSampleWire } from "./types.js";
import { clampSampleRate, DEFAULT_SAMPLE_RATE_HZ } from "./types.js";

export interface PointerPosition {
  x: number; // image-space px
  y: number;
  slice: number;
}

export interface GazeCaptureOptions {
  post: (samples: GazeSampleWire[]) => Promise<void>;
  rateHz?: number;
  batchIntervalMs?: number;
  now?: () => number;
  /** Injectable scheduler so tests can drive time. */
  setIntervalFn?: typeof setInterval;
  clearIntervalFn?: typeof clearInterval;
  onSessionExpired?: () => void;
  onDroppedBatch?: (size: number) => void;
}

const DEFAULT_BATCH_INTERVAL_MS = 250;

/** Samples the latest pointer position at a fixed rate (not per event) and
 * ships batches to the service. A failed batch is retried once, then dropped
 * so capture never stalls the UI. */
export class GazeCapture {
  private readonly post: GazeCaptureOptions["post"];
  private readonly batchIntervalMs: number;
  private readonly now: () => number;
  private readonly setIntervalFn: typeof setInterval;
  private readonly clearIntervalFn: typeof clearInterval;
  private readonly onSessionExpired?: () => void;
  private readonly onDroppedBatch?: (size: number) => void;

  readonly rateHz: number;

  private pointer: PointerPosition | null = null;
  private pending: GazeSampleWire[] = [];
  private sampleTimer: ReturnType<typeof setInterval> | null = null;
  private flushTimer: ReturnType<typeof setInterval> | null = null;
  private startedAt = 0;
  private flushing = false;

  sampleCount = 0;
  postedCount = 0;

  constructor(opts: GazeCaptureOptions) {
    this.post = opts.post;
    this.rateHz = clampSampleRate(opts.rateHz ?? DEFAULT_SAMPLE_RATE_HZ);
    this.batchIntervalMs = opts.batchIntervalMs ?? DEFAULT_BATCH_INTERVAL_MS;
    this.now = opts.now ?? (() => performance.now());
    this.setIntervalFn = opts.setIntervalFn ?? setInterval;
    this.clearIntervalFn = opts.clearIntervalFn ?? clearInterval;
    this.onSessionExpired = opts.onSessionExpired;
    this.onDroppedBatch = opts.onDroppedBatch;
  }

  get running(): boolean {
    return this.sampleTimer !== null;
  }

  /** Latest pointer in image coordinates; null while outside the canvas. */
  setPointer(pos: PointerPosition | null): void {
    this.pointer = pos;
  }

  start(): void {
    if (this.running) return;
    this.startedAt = this.now();
    this.sampleTimer = this.setIntervalFn(() => this.sampleTick(), 1000 / this.rateHz);
    this.flushTimer = this.setIntervalFn(() => void this.flush(), this.batchIntervalMs);
  }

  stop(): void {
    if (this.sampleTimer !== null) this.clearIntervalFn(this.sampleTimer);
    if (this.flushTimer !== null) this.clearIntervalFn(this.flushTimer);
    this.sampleTimer = null;
    this.flushTimer = null;
    void this.flush();
  }

  private sampleTick(): void {
    if (this.pointer === null) return;
    this.pending.push({
      t_ms: this.now() - this.startedAt,
      sx: this.pointer.x,
      sy: this.pointer.y,
      slice: this.pointer.slice,
    });
    this.sampleCount += 1;
  }

  async flush(): Promise<void> {
    if (this.flushing || this.pending.length === 0) return;
    const batch = this.pending;
    this.pending = [];
    this.flushing = true;
    try {
      try {
        await this.post(batch);
        this.postedCount += batch.length;
      } catch (err) {
        if (this.isExpired(err)) {
          this.handleExpired();
          return;
        }
        // one retry, then the batch is dropped
        try {
          await this.post(batch);
          this.postedCount += batch.length;
        } catch (err2) {
          if (this.isExpired(err2)) {
            this.handleExpired();
            return;
          }
          this.onDroppedBatch?.(batch.length);
        }
      }
    } finally {
      this.flushing = false;
    }
  }

  private isExpired(err: unknown): boolean {
    return typeof err === "object" && err !== null && (err as { status?: number }).status === 404;
  }

  private handleExpired(): void {
    if (this.running) {
      if (this.sampleTimer !== null) this.clearIntervalFn(this.sampleTimer);
      if (this.flushTimer !== null) this.clearIntervalFn(this.flushTimer);
      this.sampleTimer = null;
      this.flushTimer = null;
    }
    this.pending = [];
    this.onSessionExpired?.();
  }
}
