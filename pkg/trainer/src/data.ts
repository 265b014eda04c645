/**
 * Training data: a deterministic synthetic patch generator plus plain
 * binary PPM read/write so the exact bytes seen by the trainer can be
 * handed to other tools.
 *
 * Patches are quantized to 8 bits first and both consumers (the loss
 * graph and files on disk) start from those bytes, so there is never a
 * sub-quantum mismatch between what was trained on and what a decoder
 * reads back.
 */

import * as fs from "node:fs";
import * as path from "node:path";

/** Small fast PRNG; good enough for data synthesis and weight init. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function gaussianPair(rng: () => number): [number, number] {
  let u = rng();
  while (u === 0) {
    u = rng();
  }
  const r = Math.sqrt(-2 * Math.log(u));
  const theta = 2 * Math.PI * rng();
  return [r * Math.cos(theta), r * Math.sin(theta)];
}

/** Canvas size whose statistics every other size is matched to. */
const REFERENCE_SIDE = 128;

/**
 * Soft blobs over a tilted background: smooth regions, gentle color
 * gradients and a few sharpish bumps. Index picks the patch, seed picks
 * the corpus.
 */
export function synthPatch(seed: number, index: number, height: number, width: number): Uint8Array {
  const rng = mulberry32((seed ^ Math.imul(index + 1, 0x9e3779b9)) >>> 0);
  const base = [0, 0, 0].map(() => 0.15 + 0.7 * rng());
  const gradX = [0, 0, 0].map(() => (rng() - 0.5) * 0.5);
  const gradY = [0, 0, 0].map(() => (rng() - 0.5) * 0.5);

  // blob size is absolute and count scales with area, so local statistics
  // do not depend on the canvas: a large canvas looks like tiled patches,
  // not like a zoomed-in patch
  const tiles = (height * width) / (REFERENCE_SIDE * REFERENCE_SIDE);
  const blobCount = Math.max(1, Math.round((3 + Math.floor(rng() * 6)) * tiles));
  const blobs: Array<{ cy: number; cx: number; inv2s2: number; amp: [number, number, number] }> = [];
  for (let b = 0; b < blobCount; b++) {
    const cy = rng() * height;
    const cx = rng() * width;
    const sigma = REFERENCE_SIDE * (0.03 + 0.22 * rng());
    const amp = (rng() - 0.5) * 1.0;
    const tint: [number, number, number] = [
      amp * (0.5 + 0.5 * rng()),
      amp * (0.5 + 0.5 * rng()),
      amp * (0.5 + 0.5 * rng()),
    ];
    blobs.push({ cy, cx, inv2s2: 1 / (2 * sigma * sigma), amp: tint });
  }

  const out = new Uint8Array(height * width * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let r = base[0] + gradX[0] * (x / width) + gradY[0] * (y / height);
      let g = base[1] + gradX[1] * (x / width) + gradY[1] * (y / height);
      let bch = base[2] + gradX[2] * (x / width) + gradY[2] * (y / height);
      for (const blob of blobs) {
        const dy = y - blob.cy;
        const dx = x - blob.cx;
        const w = Math.exp(-(dy * dy + dx * dx) * blob.inv2s2);
        r += blob.amp[0] * w;
        g += blob.amp[1] * w;
        bch += blob.amp[2] * w;
      }
      const at = (y * width + x) * 3;
      out[at] = Math.round(Math.min(1, Math.max(0, r)) * 255);
      out[at + 1] = Math.round(Math.min(1, Math.max(0, g)) * 255);
      out[at + 2] = Math.round(Math.min(1, Math.max(0, bch)) * 255);
    }
  }
  return out;
}

export function writePpm(filePath: string, height: number, width: number, rgb: Uint8Array): void {
  if (rgb.length !== height * width * 3) {
    throw new Error(`pixel buffer is ${rgb.length} bytes, expected ${height * width * 3}`);
  }
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  fs.writeFileSync(filePath, Buffer.concat([header, Buffer.from(rgb)]));
}

export function readPpm(filePath: string): { height: number; width: number; rgb: Uint8Array } {
  const body = fs.readFileSync(filePath);
  let off = 0;
  const token = (): string => {
    while (off < body.length) {
      const c = body[off];
      if (c === 0x23) {
        while (off < body.length && body[off] !== 0x0a) off++;
      } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
        off++;
      } else {
        break;
      }
    }
    const start = off;
    while (off < body.length && !/\s/.test(String.fromCharCode(body[off]))) off++;
    if (start === off) {
      throw new Error(`${filePath}: truncated header`);
    }
    return body.subarray(start, off).toString("ascii");
  };

  if (token() !== "P6") {
    throw new Error(`${filePath}: not a binary PPM`);
  }
  const width = Number(token());
  const height = Number(token());
  const maxval = Number(token());
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error(`${filePath}: bad dimensions`);
  }
  if (maxval !== 255) {
    throw new Error(`${filePath}: only maxval 255 is supported`);
  }
  off += 1;
  const need = height * width * 3;
  if (body.length - off < need) {
    throw new Error(`${filePath}: pixel data truncated`);
  }
  return { height, width, rgb: new Uint8Array(body.subarray(off, off + need)) };
}

export function listPpmFiles(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((f) => f.toLowerCase().endsWith(".ppm"))
    .sort()
    .map((f) => path.join(dir, f));
}
