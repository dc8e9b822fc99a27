/** Window/level display mapping for signed CT intensities. */

export interface WindowLevel {
  center: number;
  width: number; // > 0
}

export const DEFAULT_WINDOW: WindowLevel = { center: 40, width: 400 };

export function windowToGray(value: number, wl: WindowLevel): number {
  const lo = wl.center - wl.width / 2;
  const t = (value - lo) / wl.width;
  return Math.round(Math.min(1, Math.max(0, t)) * 255);
}

/** Map a raw int16 plane to RGBA grayscale bytes for canvas upload. */
export function planeToRgba(plane: Int16Array, wl: WindowLevel): Uint8ClampedArray {
  const out = new Uint8ClampedArray(plane.length * 4);
  const lo = wl.center - wl.width / 2;
  const inv = 255 / wl.width;
  for (let i = 0; i < plane.length; i++) {
    let v = (plane[i] - lo) * inv;
    v = v < 0 ? 0 : v > 255 ? 255 : v;
    const o = i * 4;
    out[o] = out[o + 1] = out[o + 2] = v;
    out[o + 3] = 255;
  }
  return out;
}

/** Canvas <-> image coordinate mapping for a zoom+pan display transform. */
export interface ViewTransform {
  offsetX: number; // canvas px of image origin
  offsetY: number;
  scale: number; // canvas px per image px, > 0
}

export function fitTransform(
  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
): ViewTransform {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

export function canvasToImage(
  cx: number,
  cy: number,
  t: ViewTransform,
): { x: number; y: number } {
  return { x: (cx - t.offsetX) / t.scale, y: (cy - t.offsetY) / t.scale };
}

export function imageToCanvas(
  x: number,
  y: number,
  t: ViewTransform,
): { x: number; y: number } {
  return { x: x * t.scale + t.offsetX, y: y * t.scale + t.offsetY };
}

/** True when a canvas point lands strictly inside the displayed image, i.e.
 * the mapped sample can never be clamped by the service. */
export function insideImage(
  cx: number,
  cy: number,
  t: ViewTransform,
  imageW: number,
  imageH: number,
): boolean {
  const { x, y } = canvasToImage(cx, cy, t);
  return x >= 0 && y >= 0 && x <= imageW - 1 && y <= imageH - 1;
}
