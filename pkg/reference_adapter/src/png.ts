import { readFileSync } from "node:fs";
import { PNG } from "pngjs";

/** Decoded image: RGBA bytes, row-major, 4 bytes per pixel. */
export interface RgbaImage {
  width: number;
  height: number;
  data: Uint8Array;
}

export function readImage(path: string): RgbaImage {
  const png = PNG.sync.read(readFileSync(path));
  return { width: png.width, height: png.height, data: png.data };
}

/** Encode an RGBA buffer to PNG bytes (used by the tests to build fixtures). */
export function writeImageBytes(image: RgbaImage): Buffer {
  const png = new PNG({ width: image.width, height: image.height });
  png.data = Buffer.from(image.data);
  return PNG.sync.write(png);
}
