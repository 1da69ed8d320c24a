import { spawn } from "node:child_process";
import { existsSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { createInterface, Interface } from "node:readline";
import { describe, expect, it } from "vitest";

import { parseResponse } from "../src/wire";
import {
  lcg,
  scene,
  SIX_CLASSES,
  TABLE_COLORS,
  tempDir,
  writeScene,
  Rect,
} from "./helpers";

const ENTRY = join(__dirname, "..", "dist", "main.js");

/** Ten 96x96 scenes with one to three rectangles on a 3x3 cell grid. */
function buildFixtures(dir: string): Array<{ path: string; rects: Rect[] }> {
  const rand = lcg(20260823);
  const fixtures = [];
  for (let i = 0; i < 10; i++) {
    const nRects = 1 + Math.floor(rand() * 3);
    const cells = [0, 1, 2, 3, 4, 5, 6, 7, 8];
    const rects: Rect[] = [];
    for (let r = 0; r < nRects; r++) {
      const cell = cells.splice(Math.floor(rand() * cells.length), 1)[0];
      const cx = (cell % 3) * 32;
      const cy = Math.floor(cell / 3) * 32;
      const w = 10 + Math.floor(rand() * 14);
      const h = 10 + Math.floor(rand() * 14);
      rects.push({
        x: cx + 2 + Math.floor(rand() * (30 - w)),
        y: cy + 2 + Math.floor(rand() * (30 - h)),
        w,
        h,
        rgb: TABLE_COLORS[Math.floor(rand() * TABLE_COLORS.length)],
      });
    }
    const path = join(dir, `scene_${i}.png`);
    writeScene(path, scene(96, 96, rects));
    fixtures.push({ path, rects });
  }
  return fixtures;
}

interface Exchange {
  stdout: string;
  stderr: string;
  lines: string[];
}

/** Drive the built adapter over real pipes the way the toolkit bridge does. */
async function exchange(
  requests: string[],
  argv: string[] = [],
): Promise<Exchange> {
  const child = spawn(process.execPath, [ENTRY, ...argv], {
    stdio: ["pipe", "pipe", "pipe"],
  });
  let stderr = "";
  child.stderr.on("data", (chunk) => {
    stderr += String(chunk);
  });
  const reader: Interface = createInterface({ input: child.stdout });
  const pending = reader[Symbol.asyncIterator]();
  const nextLine = async (): Promise<string> => {
    const item = await pending.next();
    if (item.done) {
      throw new Error(`adapter closed stdout early; stderr: ${stderr}`);
    }
    return item.value;
  };

  child.stdin.write(`${JSON.stringify({ classes: SIX_CLASSES })}\n`);
  const ack = await nextLine();
  expect(ack).toBe('{"ok":true}');
  const lines: string[] = [];
  for (const req of requests) {
    child.stdin.write(`${req}\n`);
  }
  for (let i = 0; i < requests.length; i++) {
    lines.push(await nextLine());
  }
  child.stdin.end();
  await new Promise((resolve) => child.on("close", resolve));
  return { stdout: [ack, ...lines].join("\n"), stderr, lines };
}

function requestLine(path: string): string {
  return JSON.stringify({ image: path, width: 96, height: 96 });
}

describe("protocol conformance over real pipes", () => {
  it("answers a 10-image batch with schema-valid ordered lines", async () => {
    expect(existsSync(ENTRY)).toBe(true);
    const dir = tempDir("adapter-conf-");
    const fixtures = buildFixtures(dir);
    const { lines, stderr } = await exchange(
      fixtures.map((f) => requestLine(f.path)),
    );
    expect(stderr).toBe("");
    expect(lines).toHaveLength(10);
    lines.forEach((line, i) => {
      const rec = parseResponse(line);
      expect(rec.image).toBe(fixtures[i].path);
      expect(rec.detections).toHaveLength(fixtures[i].rects.length);
      for (const det of rec.detections) {
        expect(det.class_probs).toHaveLength(6);
        const sum = det.class_probs.reduce((a, b) => a + b, 0);
        expect(Math.abs(sum - 1)).toBeLessThanOrEqual(1e-6);
      }
    });
  });

  it("is byte-identical across two runs on the same input", async () => {
    const dir = tempDir("adapter-repro-");
    const fixtures = buildFixtures(dir);
    const requests = fixtures.map((f) => requestLine(f.path));
    const first = await exchange(requests);
    const second = await exchange(requests);
    expect(second.stdout).toBe(first.stdout);
  });

  it("honors a config file passed on the command line", async () => {
    const dir = tempDir("adapter-config-");
    const fixtures = buildFixtures(dir).slice(0, 2);
    const cfg = join(dir, "adapter.json");
    writeFileSync(cfg, JSON.stringify({ modelHook: "empty" }));
    const { lines } = await exchange(
      fixtures.map((f) => requestLine(f.path)),
      [cfg],
    );
    for (const line of lines) {
      expect(parseResponse(line).detections).toEqual([]);
    }
  });
});
