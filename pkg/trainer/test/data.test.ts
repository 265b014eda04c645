import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { describe, expect, it } from "vitest";
import { mulberry32, readPpm, synthPatch, writePpm } from "../src/data";

function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "data-"));
}

describe("synthetic patches", () => {
  it("is deterministic in (seed, index)", () => {
    const a = synthPatch(7, 3, 32, 48);
    const b = synthPatch(7, 3, 32, 48);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  it("varies with the index", () => {
    const a = synthPatch(7, 0, 32, 32);
    const b = synthPatch(7, 1, 32, 32);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(false);
  });

  it("fills the full byte range sanely", () => {
    const a = synthPatch(1, 0, 64, 64);
    expect(a.length).toBe(64 * 64 * 3);
    let lo = 255;
    let hi = 0;
    for (const v of a) {
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
    expect(hi).toBeGreaterThan(lo);
  });
});

describe("ppm files", () => {
  it("round-trips", () => {
    const file = path.join(tmpDir(), "x.ppm");
    const rgb = synthPatch(2, 0, 16, 24);
    writePpm(file, 16, 24, rgb);
    const back = readPpm(file);
    expect(back.height).toBe(16);
    expect(back.width).toBe(24);
    expect(Buffer.from(back.rgb).equals(Buffer.from(rgb))).toBe(true);
  });

  it("reads headers with comments", () => {
    const file = path.join(tmpDir(), "c.ppm");
    const pixels = Buffer.alloc(2 * 2 * 3, 9);
    fs.writeFileSync(file, Buffer.concat([Buffer.from("P6\n# note\n2 2\n255\n", "ascii"), pixels]));
    const back = readPpm(file);
    expect(back.width).toBe(2);
    expect(back.rgb[0]).toBe(9);
  });

  it("rejects wrong magic and truncation", () => {
    const dir = tmpDir();
    const bad = path.join(dir, "bad.ppm");
    fs.writeFileSync(bad, Buffer.from("P5\n2 2\n255\n0000", "ascii"));
    expect(() => readPpm(bad)).toThrow(/PPM/);
    const short = path.join(dir, "short.ppm");
    fs.writeFileSync(short, Buffer.from("P6\n4 4\n255\nxy", "ascii"));
    expect(() => readPpm(short)).toThrow(/truncated/);
  });
});

describe("rng", () => {
  it("streams identically from the same seed", () => {
    const a = mulberry32(123);
    const b = mulberry32(123);
    for (let i = 0; i < 20; i++) {
      expect(a()).toBe(b());
    }
  });
});
