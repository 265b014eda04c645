import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";
import { TOY_MODEL } from "../src/config";
import { mulberry32 } from "../src/data";
import {
  alphaBar,
  conv,
  fuseSources,
  initParams,
  pixelShuffle,
  runAnalysis,
  runAuxDecoder,
  runContextStep,
  runHyperAnalysis,
  runHyperSynthesis,
  runPixelDecoder,
  runSource16,
  runSource8,
  runSynthesis,
} from "../src/nets";

/** Plain-loop convolution, the oracle the matMul decomposition must match. */
function refConv(
  x: Float32Array,
  h: number,
  w: number,
  ci: number,
  wgt: Float32Array,
  kh: number,
  kw: number,
  co: number,
  bias: Float32Array,
  stride: number,
  pad: number
): { data: Float32Array; ho: number; wo: number } {
  const ho = Math.floor((h + 2 * pad - kh) / stride) + 1;
  const wo = Math.floor((w + 2 * pad - kw) / stride) + 1;
  const out = new Float32Array(ho * wo * co);
  for (let y = 0; y < ho; y++) {
    for (let xo = 0; xo < wo; xo++) {
      for (let c = 0; c < co; c++) {
        let acc = bias[c];
        for (let i = 0; i < kh; i++) {
          for (let j = 0; j < kw; j++) {
            const yy = y * stride + i - pad;
            const xx = xo * stride + j - pad;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
              continue;
            }
            for (let q = 0; q < ci; q++) {
              acc += x[(yy * w + xx) * ci + q] * wgt[((i * kw + j) * ci + q) * co + c];
            }
          }
        }
        out[(y * wo + xo) * co + c] = acc;
      }
    }
  }
  return { data: out, ho, wo };
}

function randArray(n: number, seed: number): Float32Array {
  const rng = mulberry32(seed);
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    out[i] = rng() * 2 - 1;
  }
  return out;
}

function expectClose(actual: ArrayLike<number>, wanted: ArrayLike<number>, tol = 1e-4) {
  expect(actual.length).toBe(wanted.length);
  for (let i = 0; i < wanted.length; i++) {
    expect(Math.abs(actual[i] - wanted[i])).toBeLessThanOrEqual(tol);
  }
}

describe("convolution decomposition", () => {
  const cases: Array<{ h: number; w: number; ci: number; co: number; k: number; stride: number; pad: number }> = [
    { h: 5, w: 6, ci: 3, co: 4, k: 3, stride: 1, pad: 1 },
    { h: 5, w: 6, ci: 3, co: 4, k: 3, stride: 2, pad: 1 },
    { h: 8, w: 8, ci: 2, co: 5, k: 3, stride: 2, pad: 1 },
    { h: 4, w: 7, ci: 6, co: 2, k: 1, stride: 1, pad: 0 },
    { h: 6, w: 4, ci: 2, co: 3, k: 3, stride: 1, pad: 0 },
  ];

  for (const c of cases) {
    it(`matches the reference for k${c.k} s${c.stride} p${c.pad} on ${c.h}x${c.w}`, () => {
      const xArr = randArray(c.h * c.w * c.ci, 11);
      const wArr = randArray(c.k * c.k * c.ci * c.co, 22);
      const bArr = randArray(c.co, 33);
      const want = refConv(xArr, c.h, c.w, c.ci, wArr, c.k, c.k, c.co, bArr, c.stride, c.pad);
      const got = tf.tidy(() => {
        const x = tf.tensor(xArr, [1, c.h, c.w, c.ci]);
        const wgt = tf.tensor(wArr, [c.k, c.k, c.ci, c.co]);
        const bias = tf.tensor(bArr, [c.co]);
        const y = conv(x, wgt, bias, c.stride, c.pad);
        expect(y.shape).toEqual([1, want.ho, want.wo, c.co]);
        return y.dataSync();
      });
      expectClose(got, want.data);
    });
  }

  it("is differentiable through taps and weights", () => {
    const g = tf.tidy(() => {
      const x = tf.tensor(randArray(2 * 4 * 4 * 2, 5), [2, 4, 4, 2]);
      const wgt = tf.tensor(randArray(3 * 3 * 2 * 3, 6), [3, 3, 2, 3]);
      const bias = tf.zeros([3]);
      const f = (xx: tf.Tensor, ww: tf.Tensor) => tf.sum(tf.square(conv(xx, ww, bias, 2, 1))) as tf.Scalar;
      const grads = tf.grads(f)([x, wgt]);
      return grads.map((t) => t.dataSync());
    });
    for (const arr of g) {
      let nonzero = 0;
      for (const v of arr) {
        expect(Number.isFinite(v)).toBe(true);
        if (v !== 0) nonzero++;
      }
      expect(nonzero).toBeGreaterThan(0);
    }
  });
});

describe("sub-pixel upsample", () => {
  it("places channels in scanline order per output channel", () => {
    const got = tf.tidy(() => {
      const x = tf.tensor([1, 2, 3, 4], [1, 1, 1, 4]);
      const y = pixelShuffle(x, 2);
      expect(y.shape).toEqual([1, 2, 2, 1]);
      return [...y.dataSync()];
    });
    expect(got).toEqual([1, 2, 3, 4]);
  });

  it("keeps output channels contiguous", () => {
    const got = tf.tidy(() => {
      const x = tf.tensor([1, 2, 3, 4, 5, 6, 7, 8], [1, 1, 1, 8]);
      const y = pixelShuffle(x, 2);
      expect(y.shape).toEqual([1, 2, 2, 2]);
      return [...y.dataSync()];
    });
    // NHWC positions: (0,0): out ch0 = in ch0, out ch1 = in ch4; (0,1): ch1, ch5 ...
    expect(got).toEqual([1, 5, 2, 6, 3, 7, 4, 8]);
  });

  it("inverts a 2x2 tiling round trip", () => {
    const ok = tf.tidy(() => {
      const x = tf.tensor(randArray(1 * 2 * 2 * 8, 7), [1, 2, 2, 8]);
      const up = pixelShuffle(x, 2);
      expect(up.shape).toEqual([1, 4, 4, 2]);
      return true;
    });
    expect(ok).toBe(true);
  });
});

describe("transform geometry", () => {
  it("produces the documented field sizes at 128", () => {
    const p = initParams(TOY_MODEL, 3);
    try {
      tf.tidy(() => {
        const x = tf.tensor(randArray(128 * 128 * 3, 44), [1, 128, 128, 3]);
        const s8 = runSource8(x, p);
        const s16 = runSource16(x, p);
        expect(s8.shape).toEqual([1, 16, 16, 4]);
        expect(s16.shape).toEqual([1, 8, 8, 12]);
        const latent = fuseSources(s8, s16, p);
        expect(latent.shape).toEqual([1, 8, 8, 16]);
        const y = runAnalysis(latent, p, TOY_MODEL);
        expect(y.shape).toEqual([1, 2, 2, 16]);
        const z = runHyperAnalysis(y, p, TOY_MODEL);
        expect(z.shape).toEqual([1, 1, 1, 8]);
        const features = runHyperSynthesis(z, p, TOY_MODEL);
        expect(features.shape).toEqual([1, 4, 4, 16]);
        const [mean, scaleRaw] = runContextStep(tf.slice(features, [0, 0, 0, 0], [1, 2, 2, 16]), p, 0, TOY_MODEL);
        expect(mean.shape).toEqual([1, 2, 2, 16]);
        expect(scaleRaw.shape).toEqual([1, 2, 2, 16]);
        const noisy = runSynthesis(y, p, TOY_MODEL);
        const guide = runAuxDecoder(y, p, TOY_MODEL);
        expect(noisy.shape).toEqual([1, 16, 16, 4]);
        expect(guide.shape).toEqual([1, 16, 16, 4]);
        const pix = runPixelDecoder(noisy, p);
        expect(pix.shape).toEqual([1, 128, 128, 3]);
        for (const v of pix.dataSync()) {
          expect(Number.isFinite(v)).toBe(true);
        }
      });
    } finally {
      p.dispose();
    }
  });

  it("inverts the hyper path exactly at 256", () => {
    const p = initParams(TOY_MODEL, 4);
    try {
      tf.tidy(() => {
        const x = tf.tensor(randArray(256 * 256 * 3, 45), [1, 256, 256, 3]);
        const y = runAnalysis(fuseSources(runSource8(x, p), runSource16(x, p), p), p, TOY_MODEL);
        expect(y.shape).toEqual([1, 4, 4, 16]);
        const z = runHyperAnalysis(y, p, TOY_MODEL);
        expect(z.shape).toEqual([1, 1, 1, 8]);
        expect(runHyperSynthesis(z, p, TOY_MODEL).shape).toEqual([1, 4, 4, 16]);
      });
    } finally {
      p.dispose();
    }
  });
});

describe("noise schedule", () => {
  it("starts at 1 - 1e-4 and decreases", () => {
    expect(alphaBar(10, 0)).toBeCloseTo(1 - 1e-4, 12);
    let prev = 1;
    for (let t = 0; t < 10; t++) {
      const ab = alphaBar(10, t);
      expect(ab).toBeLessThan(prev);
      expect(ab).toBeGreaterThan(0);
      prev = ab;
    }
  });
});

describe("seeded init", () => {
  it("is reproducible and schema-complete", () => {
    const a = initParams(TOY_MODEL, 9);
    const b = initParams(TOY_MODEL, 9);
    const c = initParams(TOY_MODEL, 10);
    try {
      const wA = a.get("analysis.down0.weight").dataSync();
      const wB = b.get("analysis.down0.weight").dataSync();
      const wC = c.get("analysis.down0.weight").dataSync();
      expect([...wA]).toEqual([...wB]);
      expect([...wA]).not.toEqual([...wC]);
      const bias = a.get("ctx.adapt_out2.bias").dataSync();
      expect(bias[0]).toBe(0);
      expect(bias[TOY_MODEL.codeChannels]).toBe(1);
      expect(a.get("hyper_prior.scale").dataSync()[0]).toBe(1);
      expect(a.get("hyper_prior.loc").dataSync()[0]).toBe(0);
    } finally {
      a.dispose();
      b.dispose();
      c.dispose();
    }
  });

  it("freezes requested prefixes out of the trainable set", () => {
    const p = initParams(TOY_MODEL, 12);
    try {
      const names = p.trainables(["noise_pred."]).map((v) => v.name);
      expect(names.some((n) => n.includes("noise_pred"))).toBe(false);
      expect(names.length).toBe(p.vars.size - 4);
    } finally {
      p.dispose();
    }
  });
});
