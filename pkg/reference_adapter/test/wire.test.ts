import { describe, expect, it } from "vitest";

import {
  encodeAck,
  encodeResponse,
  parseHandshake,
  parseRequest,
  parseResponse,
  WireError,
} from "../src/wire";

describe("handshake", () => {
  it("parses a class table", () => {
    expect(parseHandshake('{"classes":["red","green"]}')).toEqual({
      classes: ["red", "green"],
    });
  });

  it("rejects an empty table", () => {
    expect(() => parseHandshake('{"classes":[]}')).toThrow(WireError);
  });

  it("rejects non-JSON", () => {
    expect(() => parseHandshake("{nope")).toThrow(/not valid JSON/);
  });

  it("acknowledges with the exact ok line", () => {
    expect(encodeAck()).toBe('{"ok":true}');
  });
});

describe("request", () => {
  it("parses image path and dimensions", () => {
    expect(parseRequest('{"image":"a.png","width":96,"height":64}')).toEqual({
      image: "a.png",
      width: 96,
      height: 64,
    });
  });

  it("rejects zero width", () => {
    expect(() =>
      parseRequest('{"image":"a.png","width":0,"height":64}'),
    ).toThrow(WireError);
  });

  it("rejects a missing image key", () => {
    expect(() => parseRequest('{"width":96,"height":64}')).toThrow(/image/);
  });
});

describe("response", () => {
  const valid =
    '{"image":"a.png","detections":[{"bbox":[1,2,3,4],' +
    '"class_probs":[0.25,0.75],"confidence":0.75}]}';

  it("accepts a minimal record", () => {
    const rec = parseResponse(valid);
    expect(rec.detections).toHaveLength(1);
    expect(rec.detections[0].bbox).toEqual([1, 2, 3, 4]);
  });

  it("accepts empty detections", () => {
    expect(parseResponse('{"image":"a.png","detections":[]}').detections).toEqual(
      [],
    );
  });

  it("rejects a degenerate bbox", () => {
    const bad = valid.replace("[1,2,3,4]", "[3,2,3,4]");
    expect(() => parseResponse(bad)).toThrow(/x2 > x1/);
  });

  it("rejects probs that do not sum to 1", () => {
    const bad = valid.replace("[0.25,0.75]", "[0.25,0.55]");
    expect(() => parseResponse(bad)).toThrow(/sum to 1/);
  });

  it("rejects negative probs", () => {
    const bad = valid.replace("[0.25,0.75]", "[-0.25,1.25]");
    expect(() => parseResponse(bad)).toThrow(WireError);
  });

  it("rejects confidence outside [0, 1]", () => {
    const bad = valid.replace('"confidence":0.75', '"confidence":1.5');
    expect(() => parseResponse(bad)).toThrow(WireError);
  });

  it("encodes compactly with a fixed key order", () => {
    const rec = parseResponse(valid);
    expect(encodeResponse(rec)).toBe(valid);
  });

  it("round-trips through encode and parse", () => {
    const rec = parseResponse(valid);
    expect(parseResponse(encodeResponse(rec))).toEqual(rec);
  });
});
