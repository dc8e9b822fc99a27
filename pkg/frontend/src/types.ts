export type OverlayLayer = "heatmap" | "coarse" | "segmentation" | "interpolated";

export type SliceTag = "segmented" | "interpolated" | "empty";

export interface SessionMeta {
  id: string;
  dims: [number, number, number];
  spacing_mm: [number, number, number];
  slices: number;
  evaluation_mode?: boolean;
  gazed_slices?: number[];
  has_masklet?: boolean;
}

/** Wire shape of one gaze sample; sx/sy carry image-space pixels because the
 * client applies the canvas transform before posting. */
export interface GazeSampleWire {
  t_ms: number;
  sx: number;
  sy: number;
  slice: number;
}

export interface SliceTagEntry {
  slice: number;
  tag: SliceTag;
}

export interface SegmentResponse {
  prompted_slices: number[];
  slices: SliceTagEntry[];
  tag_counts: Record<SliceTag, number>;
  dice?: number;
}

export interface ViewerState {
  sessionId: string;
  slice: number;
  sliceCount: number;
  windowCenter: number;
  windowWidth: number;
  layer: OverlayLayer;
  overlayAlpha: number;
  captureOn: boolean;
  sampleRateHz: number;
}

export const MIN_SAMPLE_RATE_HZ = 10;
export const MAX_SAMPLE_RATE_HZ = 120;
export const DEFAULT_SAMPLE_RATE_HZ = 90;

export function clampSampleRate(rate: number): number {
  return Math.min(MAX_SAMPLE_RATE_HZ, Math.max(MIN_SAMPLE_RATE_HZ, rate));
}
