import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { RgbaImage, writeImageBytes } from "../src/png";

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
  rgb: [number, number, number];
}

/** Dim gray background with solid rectangles, like the toolkit's scenes. */
export function scene(width: number, height: number, rects: Rect[]): RgbaImage {
  const data = new Uint8Array(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    data[i * 4] = 30;
    data[i * 4 + 1] = 30;
    data[i * 4 + 2] = 30;
    data[i * 4 + 3] = 255;
  }
  for (const r of rects) {
    for (let y = r.y; y < r.y + r.h; y++) {
      for (let x = r.x; x < r.x + r.w; x++) {
        const o = (y * width + x) * 4;
        data[o] = r.rgb[0];
        data[o + 1] = r.rgb[1];
        data[o + 2] = r.rgb[2];
      }
    }
  }
  return { width, height, data };
}

export function tempDir(prefix: string): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

export function writeScene(path: string, image: RgbaImage): void {
  writeFileSync(path, writeImageBytes(image));
}

/** Small deterministic PRNG so fixture layouts are stable across runs. */
export function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

export const TABLE_COLORS: ReadonlyArray<[number, number, number]> = [
  [255, 0, 0],
  [0, 255, 0],
  [0, 0, 255],
  [255, 255, 0],
  [255, 0, 255],
  [0, 255, 255],
];

export const SIX_CLASSES = [
  "red",
  "green",
  "blue",
  "yellow",
  "magenta",
  "cyan",
];
