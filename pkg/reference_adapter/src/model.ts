import { RgbaImage } from "./png";

/**
 * The wrapped detector.  A real deployment would load actual weights here;
 * this package ships two deterministic stand-ins so the wire protocol can be
 * exercised end to end without any model downloads.
 */

export interface RawDetection {
  /** [x1, y1, x2, y2] in pixels, right/bottom exclusive. */
  bbox: [number, number, number, number];
  /** Scores over the model's own vocabulary; nonnegative, any scale. */
  scores: Record<string, number>;
}

export interface DetectorModel {
  /** Class names the model can emit, in its own order. */
  vocabulary: readonly string[];
  detect(image: RgbaImage): RawDetection[];
}

export class ModelError extends Error {}

/** Knobs handed to the model loader; strings so real backends can interpret them. */
export interface ModelKnobs {
  device: string;
  batchSize: string;
}

const COLOR_ANCHORS: ReadonlyArray<readonly [string, [number, number, number]]> = [
  ["red", [255, 0, 0]],
  ["green", [0, 255, 0]],
  ["blue", [0, 0, 255]],
  ["yellow", [255, 255, 0]],
  ["magenta", [255, 0, 255]],
  ["cyan", [0, 255, 255]],
  ["white", [255, 255, 255]],
  ["orange", [255, 128, 0]],
];

const BRIGHTNESS_GATE = 128; // a pixel is foreground if any channel reaches this
const MIN_COMPONENT_AREA = 40;
const SCORE_SCALE = 60; // RGB distance that drops a score by a factor of e

/**
 * Deterministic color-blob detector: foreground pixels (any bright channel)
 * are grouped into 4-connected components; each large enough component
 * becomes one detection scored by the distance of its mean color to the
 * named color anchors.
 */
class ColorBlobModel implements DetectorModel {
  readonly vocabulary = COLOR_ANCHORS.map(([name]) => name);

  detect(image: RgbaImage): RawDetection[] {
    const { width, height, data } = image;
    const visited = new Uint8Array(width * height);
    const detections: RawDetection[] = [];
    const stack: number[] = [];

    const isForeground = (idx: number): boolean => {
      const o = idx * 4;
      return (
        data[o] >= BRIGHTNESS_GATE ||
        data[o + 1] >= BRIGHTNESS_GATE ||
        data[o + 2] >= BRIGHTNESS_GATE
      );
    };

    for (let start = 0; start < width * height; start++) {
      if (visited[start] || !isForeground(start)) {
        continue;
      }
      let minX = width;
      let minY = height;
      let maxX = 0;
      let maxY = 0;
      let area = 0;
      let sumR = 0;
      let sumG = 0;
      let sumB = 0;
      stack.length = 0;
      stack.push(start);
      visited[start] = 1;
      while (stack.length > 0) {
        const idx = stack.pop() as number;
        const x = idx % width;
        const y = (idx - x) / width;
        const o = idx * 4;
        area += 1;
        sumR += data[o];
        sumG += data[o + 1];
        sumB += data[o + 2];
        if (x < minX) minX = x;
        if (y < minY) minY = y;
        if (x > maxX) maxX = x;
        if (y > maxY) maxY = y;
        const neighbors = [
          x > 0 ? idx - 1 : -1,
          x < width - 1 ? idx + 1 : -1,
          y > 0 ? idx - width : -1,
          y < height - 1 ? idx + width : -1,
        ];
        for (const n of neighbors) {
          if (n >= 0 && !visited[n] && isForeground(n)) {
            visited[n] = 1;
            stack.push(n);
          }
        }
      }
      if (area < MIN_COMPONENT_AREA) {
        continue;
      }
      const mean: [number, number, number] = [
        sumR / area,
        sumG / area,
        sumB / area,
      ];
      detections.push({
        bbox: [minX, minY, maxX + 1, maxY + 1],
        scores: this.scoreColor(mean),
      });
    }
    return detections;
  }

  private scoreColor(mean: [number, number, number]): Record<string, number> {
    const scores: Record<string, number> = {};
    for (const [name, rgb] of COLOR_ANCHORS) {
      const dist = Math.hypot(
        mean[0] - rgb[0],
        mean[1] - rgb[1],
        mean[2] - rgb[2],
      );
      scores[name] = Math.exp(-dist / SCORE_SCALE);
    }
    return scores;
  }
}

/** Detects nothing; useful for protocol tests. */
class EmptyModel implements DetectorModel {
  readonly vocabulary: readonly string[] = [];

  detect(): RawDetection[] {
    return [];
  }
}

export function loadModel(hook: string, _knobs: ModelKnobs): DetectorModel {
  switch (hook) {
    case "color-blob":
      return new ColorBlobModel();
    case "empty":
      return new EmptyModel();
    default:
      throw new ModelError(
        `unknown model hook '${hook}' (expected 'color-blob' or 'empty')`,
      );
  }
}
