import { z } from "zod";

/**
 * Line protocol spoken with the toolkit's detector bridge.
 *
 * The bridge sends one handshake line, then one request line per image;
 * the adapter answers each request with one response line, in order.
 * All lines are single-line JSON.
 */

export class WireError extends Error {}

export const handshakeSchema = z.object({
  classes: z.array(z.string()).min(1),
});
export type Handshake = z.infer<typeof handshakeSchema>;

export const requestSchema = z.object({
  image: z.string(),
  width: z.number().int().positive(),
  height: z.number().int().positive(),
});
export type DetectRequest = z.infer<typeof requestSchema>;

const PROB_SUM_TOLERANCE = 1e-6;

export const wireDetectionSchema = z
  .object({
    bbox: z.tuple([z.number(), z.number(), z.number(), z.number()]),
    class_probs: z.array(z.number().nonnegative()).min(1),
    confidence: z.number().min(0).max(1),
  })
  .refine((d) => d.bbox[2] > d.bbox[0] && d.bbox[3] > d.bbox[1], {
    message: "bbox must satisfy x2 > x1 and y2 > y1",
  })
  .refine(
    (d) =>
      Math.abs(d.class_probs.reduce((a, b) => a + b, 0) - 1) <=
      PROB_SUM_TOLERANCE,
    { message: "class_probs must sum to 1" },
  );
export type WireDetection = z.infer<typeof wireDetectionSchema>;

export const responseSchema = z.object({
  image: z.string(),
  detections: z.array(wireDetectionSchema),
});
export type DetectResponse = z.infer<typeof responseSchema>;

function summarize(error: z.ZodError): string {
  return error.issues
    .map((issue) => {
      const path = issue.path.join(".");
      return path ? `${path}: ${issue.message}` : issue.message;
    })
    .join("; ");
}

function parseLine<T>(schema: z.ZodType<T>, line: string, what: string): T {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new WireError(`${what} is not valid JSON: ${(err as Error).message}`);
  }
  const result = schema.safeParse(raw);
  if (!result.success) {
    throw new WireError(`bad ${what}: ${summarize(result.error)}`);
  }
  return result.data;
}

export function parseHandshake(line: string): Handshake {
  return parseLine(handshakeSchema, line, "handshake line");
}

export function parseRequest(line: string): DetectRequest {
  return parseLine(requestSchema, line, "request line");
}

export function parseResponse(line: string): DetectResponse {
  return parseLine(responseSchema, line, "response line");
}

/** Canonical compact encoding with a fixed key order. */
export function encodeResponse(response: DetectResponse): string {
  return JSON.stringify({
    image: response.image,
    detections: response.detections.map((d) => ({
      bbox: d.bbox,
      class_probs: d.class_probs,
      confidence: d.confidence,
    })),
  });
}

export function encodeAck(): string {
  return JSON.stringify({ ok: true });
}
