import { createInterface } from "node:readline";
import { z } from "zod";

import { DetectorModel, loadModel } from "./model";
import { readImage, RgbaImage } from "./png";
import {
  DetectRequest,
  encodeAck,
  encodeResponse,
  parseHandshake,
  parseRequest,
  WireDetection,
} from "./wire";

export const configSchema = z.object({
  /** Which wrapped model to load; a real adapter would point at weights here. */
  modelHook: z.string().default("color-blob"),
  /** Model class name -> toolkit class name, for vocabularies that differ. */
  classMap: z.record(z.string(), z.string()).default({}),
  /** Opaque knobs passed through to the model loader. */
  device: z.string().default("cpu"),
  batchSize: z.string().default("1"),
});
export type AdapterConfig = z.infer<typeof configSchema>;

export function defaultConfig(): AdapterConfig {
  return configSchema.parse({});
}

/**
 * One handshake's worth of state: the loaded model plus the mapping from its
 * vocabulary onto the announced class table.  Score mass the model assigns to
 * classes the table does not know is spread uniformly over all table entries,
 * so emitted distributions always have the table's arity and sum to 1.
 */
export class Session {
  private readonly columns: ReadonlyArray<number | null>;

  constructor(
    private readonly model: DetectorModel,
    readonly classTable: readonly string[],
    classMap: Readonly<Record<string, string>>,
  ) {
    this.columns = model.vocabulary.map((name) => {
      const target = classMap[name] ?? name;
      const column = classTable.indexOf(target);
      return column >= 0 ? column : null;
    });
  }

  detect(image: RgbaImage): WireDetection[] {
    const k = this.classTable.length;
    return this.model.detect(image).map((raw) => {
      const probs = new Array<number>(k).fill(0);
      let unknown = 0;
      let total = 0;
      for (const name of this.model.vocabulary) {
        total += raw.scores[name] ?? 0;
      }
      if (total > 0) {
        this.model.vocabulary.forEach((name, j) => {
          const mass = (raw.scores[name] ?? 0) / total;
          const column = this.columns[j];
          if (column === null) {
            unknown += mass;
          } else {
            probs[column] += mass;
          }
        });
      } else {
        unknown = 1;
      }
      const residual = unknown / k;
      for (let i = 0; i < k; i++) {
        probs[i] += residual;
      }
      return {
        bbox: raw.bbox,
        class_probs: probs,
        confidence: Math.max(...probs),
      };
    });
  }
}

export interface ServeStreams {
  input: NodeJS.ReadableStream;
  output: NodeJS.WritableStream;
  errlog: NodeJS.WritableStream;
}

function warn(streams: ServeStreams, message: string): void {
  streams.errlog.write(`reference-adapter: ${message}\n`);
}

function answer(
  streams: ServeStreams,
  session: Session,
  request: DetectRequest,
): void {
  let detections: WireDetection[] = [];
  try {
    const image = readImage(request.image);
    if (image.width !== request.width || image.height !== request.height) {
      throw new Error(
        `decoded ${image.width}x${image.height}, manifest says ` +
          `${request.width}x${request.height}`,
      );
    }
    detections = session.detect(image);
  } catch (err) {
    warn(streams, `cannot use image ${request.image}: ${(err as Error).message}`);
    detections = [];
  }
  streams.output.write(
    `${encodeResponse({ image: request.image, detections })}\n`,
  );
}

/**
 * Run the line loop: one handshake, then one response per request, in input
 * order.  The model is loaded once, at handshake time; each request is then
 * handled statelessly.  Resolves when the input stream ends.
 */
export async function serve(
  streams: ServeStreams,
  config: AdapterConfig,
): Promise<void> {
  const reader = createInterface({
    input: streams.input,
    crlfDelay: Infinity,
  });
  let session: Session | null = null;
  for await (const rawLine of reader) {
    const line = rawLine.trim();
    if (!line) {
      continue;
    }
    if (session === null) {
      const handshake = parseHandshake(line);
      const model = loadModel(config.modelHook, {
        device: config.device,
        batchSize: config.batchSize,
      });
      session = new Session(model, handshake.classes, config.classMap);
      streams.output.write(`${encodeAck()}\n`);
      continue;
    }
    answer(streams, session, parseRequest(line));
  }
}
