import { describe, expect, it } from "vitest";

import {
  canvasToImage,
  fitTransform,
  imageToCanvas,
  insideImage,
  planeToRgba,
  windowToGray,
} from "../src/windowing.js";

describe("window/level", () => {
  it("maps the window edges to 0 and 255", () => {
    const wl = { center: 40, width: 400 };
    expect(windowToGray(-160, wl)).toBe(0);
    expect(windowToGray(240, wl)).toBe(255);
    expect(windowToGray(40, wl)).toBe(128);
    expect(windowToGray(-5000, wl)).toBe(0);
    expect(windowToGray(5000, wl)).toBe(255);
  });

  it("planeToRgba writes opaque gray pixels", () => {
    const plane = new Int16Array([-160, 40, 240]);
    const rgba = planeToRgba(plane, { center: 40, width: 400 });
    expect(rgba).toHaveLength(12);
    expect([rgba[0], rgba[3]]).toEqual([0, 255]);
    expect(rgba[4]).toBe(rgba[5]);
    expect(rgba[8]).toBe(255);
  });
});

describe("canvas/image mapping", () => {
  const t = fitTransform(128, 128, 640, 512);

  it("fit transform centers the image", () => {
    expect(t.scale).toBe(4);
    expect(t.offsetX).toBe(64);
    expect(t.offsetY).toBe(0);
  });

  it("round-trips canvas to image and back", () => {
    for (const [cx, cy] of [[64, 0], [320, 256], [575.5, 511.5]]) {
      const img = canvasToImage(cx, cy, t);
      const back = imageToCanvas(img.x, img.y, t);
      expect(back.x).toBeCloseTo(cx, 9);
      expect(back.y).toBeCloseTo(cy, 9);
    }
  });

  it("points inside the displayed image can never be clamped by the service", () => {
    // the service clamps to [0, n-1]; insideImage must be at least as strict
    for (let i = 0; i < 500; i++) {
      const cx = Math.random() * 640;
      const cy = Math.random() * 512;
      if (insideImage(cx, cy, t, 128, 128)) {
        const { x, y } = canvasToImage(cx, cy, t);
        expect(x).toBeGreaterThanOrEqual(0);
        expect(x).toBeLessThanOrEqual(127);
        expect(y).toBeGreaterThanOrEqual(0);
        expect(y).toBeLessThanOrEqual(127);
      }
    }
  });

  it("points left of the drawn image are outside", () => {
    expect(insideImage(10, 100, t, 128, 128)).toBe(false);
    expect(insideImage(63.9, 100, t, 128, 128)).toBe(false);
    expect(insideImage(64, 100, t, 128, 128)).toBe(true);
  });
});
