/**
 * Forward transforms, NHWC, differentiable end to end.
 *
 * Convolutions run as one matMul over gathered taps instead of the
 * backend conv kernels: on the pure-JS backend the conv gradient
 * kernels are an order of magnitude slower than matMul, and training
 * lives in the backward pass. Tap patches are sliced in kernel
 * row-major order so the flattened weight lines up with the
 * accumulation order of a direct convolution.
 */

import * as tf from "@tensorflow/tfjs";
import { ModelConfig } from "./config";
import { gaussianPair, mulberry32 } from "./data";
import { schema } from "./schema";

/** Named variable set. Conv weights live as [kh, kw, in, out]. */
export class Params {
  constructor(readonly vars: Map<string, tf.Variable>) {}

  get(name: string): tf.Variable {
    const v = this.vars.get(name);
    if (v === undefined) {
      throw new Error(`missing parameter ${name}`);
    }
    return v;
  }

  /** Variables to optimize; prefixes in `exclude` are left frozen. */
  trainables(exclude: string[] = []): tf.Variable[] {
    const names = [...this.vars.keys()].sort();
    return names
      .filter((n) => !exclude.some((prefix) => n.startsWith(prefix)))
      .map((n) => this.vars.get(n)!);
  }

  snapshot(): Map<string, Float32Array> {
    const snap = new Map<string, Float32Array>();
    for (const [name, v] of this.vars) {
      snap.set(name, new Float32Array(v.dataSync() as Float32Array));
    }
    return snap;
  }

  restore(snap: Map<string, Float32Array>): void {
    for (const [name, v] of this.vars) {
      const data = snap.get(name);
      if (data === undefined) {
        throw new Error(`snapshot is missing ${name}`);
      }
      v.assign(tf.tensor(data, v.shape as number[]));
    }
  }

  dispose(): void {
    for (const v of this.vars.values()) {
      v.dispose();
    }
    this.vars.clear();
  }
}

/**
 * Seeded init. He-normal conv weights with zero biases, except: the
 * scale half of each context output head starts at bias 1 so coding
 * scales begin near 1, the factorized prior starts at (0, 1), and the
 * noise head starts tiny since nothing trains it here.
 */
let instanceCount = 0;

export function initParams(cfg: ModelConfig, seed: number): Params {
  const rng = mulberry32((seed ^ 0x5f3759df) >>> 0);
  let spare: number | null = null;
  const gauss = () => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    const [a, b] = gaussianPair(rng);
    spare = b;
    return a;
  };

  // the engine requires globally unique variable names; keys stay logical
  const tag = `p${instanceCount++}/`;
  const vars = new Map<string, tf.Variable>();
  for (const [name, storeShape] of schema(cfg)) {
    if (name === "hyper_prior.loc") {
      vars.set(name, tf.variable(tf.zeros(storeShape), true, tag + name));
      continue;
    }
    if (name === "hyper_prior.scale") {
      vars.set(name, tf.variable(tf.ones(storeShape), true, tag + name));
      continue;
    }
    if (name.endsWith(".bias")) {
      const data = new Float32Array(storeShape[0]);
      if (/^ctx\.adapt_out\d\.bias$/.test(name)) {
        data.fill(1, cfg.codeChannels);
      }
      vars.set(name, tf.variable(tf.tensor(data, storeShape), true, tag + name));
      continue;
    }
    const [co, ci, kh, kw] = storeShape;
    const fanIn = ci * kh * kw;
    const std = name.startsWith("noise_pred.") ? 0.01 : Math.sqrt(2 / fanIn);
    const data = new Float32Array(kh * kw * ci * co);
    for (let i = 0; i < data.length; i++) {
      data[i] = gauss() * std;
    }
    vars.set(name, tf.variable(tf.tensor(data, [kh, kw, ci, co]), true, tag + name));
  }
  return new Params(vars);
}

/**
 * Window gathering for the matMul form of conv2d, as one custom op.
 *
 * The backend's generic Slice kernel costs milliseconds per call, so
 * pulling kh*kw taps per conv through slice/pad dominated a training
 * step by an order of magnitude. Plain typed-array loops gather the
 * patch matrix (zero padding implicit) and scatter-add the gradient.
 */
function im2col(x: tf.Tensor, kh: number, kw: number, stride: number, pad: number): tf.Tensor {
  const [n, h, w, ci] = x.shape as number[];
  const ho = Math.floor((h + 2 * pad - kh) / stride) + 1;
  const wo = Math.floor((w + 2 * pad - kw) / stride) + 1;
  const cols = kh * kw * ci;

  const run = tf.customGrad((...args: unknown[]) => {
    const xx = args[0] as tf.Tensor;
    const src = xx.dataSync() as Float32Array;
    const out = new Float32Array(n * ho * wo * cols);
    let at = 0;
    for (let b = 0; b < n; b++) {
      const base = b * h * w * ci;
      for (let y = 0; y < ho; y++) {
        for (let x0 = 0; x0 < wo; x0++) {
          for (let i = 0; i < kh; i++) {
            const yy = y * stride + i - pad;
            if (yy < 0 || yy >= h) {
              at += kw * ci;
              continue;
            }
            for (let j = 0; j < kw; j++) {
              const xx2 = x0 * stride + j - pad;
              if (xx2 < 0 || xx2 >= w) {
                at += ci;
                continue;
              }
              let from = base + (yy * w + xx2) * ci;
              for (let q = 0; q < ci; q++) {
                out[at++] = src[from++];
              }
            }
          }
        }
      }
    }
    const value = tf.tensor(out, [n * ho * wo, cols]);
    const gradFunc = (dy: tf.Tensor) => {
      const dyA = dy.dataSync() as Float32Array;
      const dx = new Float32Array(n * h * w * ci);
      let read = 0;
      for (let b = 0; b < n; b++) {
        const base = b * h * w * ci;
        for (let y = 0; y < ho; y++) {
          for (let x0 = 0; x0 < wo; x0++) {
            for (let i = 0; i < kh; i++) {
              const yy = y * stride + i - pad;
              if (yy < 0 || yy >= h) {
                read += kw * ci;
                continue;
              }
              for (let j = 0; j < kw; j++) {
                const xx2 = x0 * stride + j - pad;
                if (xx2 < 0 || xx2 >= w) {
                  read += ci;
                  continue;
                }
                let to = base + (yy * w + xx2) * ci;
                for (let q = 0; q < ci; q++) {
                  dx[to++] += dyA[read++];
                }
              }
            }
          }
        }
      }
      return tf.tensor(dx, [n, h, w, ci]);
    };
    return { value, gradFunc };
  });
  return run(x);
}

/** conv2d as window gathering plus one matMul over [kh*kw*ci, co]. */
export function conv(x: tf.Tensor, w: tf.Tensor, b: tf.Tensor, stride: number, pad: number): tf.Tensor {
  const [n, hIn, wIn, ci] = x.shape as number[];
  const [kh, kw, wci, co] = w.shape as number[];
  if (wci !== ci) {
    throw new Error(`conv input has ${ci} channels, weight expects ${wci}`);
  }
  if (kh === 1 && kw === 1 && stride === 1 && pad === 0) {
    const flat = tf.reshape(x, [n * hIn * wIn, ci]);
    const out = tf.add(tf.matMul(flat, tf.reshape(w, [ci, co])), b);
    return tf.reshape(out, [n, hIn, wIn, co]);
  }
  const ho = Math.floor((hIn + 2 * pad - kh) / stride) + 1;
  const wo = Math.floor((wIn + 2 * pad - kw) / stride) + 1;
  const patches = im2col(x, kh, kw, stride, pad);
  const out = tf.add(tf.matMul(patches, tf.reshape(w, [kh * kw * ci, co])), b);
  return tf.reshape(out, [n, ho, wo, co]);
}

function convNamed(x: tf.Tensor, p: Params, name: string, stride = 1, pad = 0): tf.Tensor {
  return conv(x, p.get(`${name}.weight`), p.get(`${name}.bias`), stride, pad);
}

/** Sub-pixel upsample; input channel c*r*r + dy*r + dx feeds offset (dy, dx). */
export function pixelShuffle(x: tf.Tensor, r: number): tf.Tensor {
  const [n, h, w, c] = x.shape as number[];
  if (c % (r * r) !== 0) {
    throw new Error(`cannot shuffle ${c} channels by factor ${r}`);
  }
  const co = c / (r * r);
  const grid = tf.reshape(x, [n, h, w, co, r, r]);
  const moved = tf.transpose(grid, [0, 1, 4, 2, 5, 3]);
  return tf.reshape(moved, [n, h * r, w * r, co]);
}

function residualBlock(x: tf.Tensor, p: Params, prefix: string): tf.Tensor {
  let h = convNamed(x, p, `${prefix}.c1`, 1, 1);
  h = tf.relu(h);
  h = convNamed(h, p, `${prefix}.c2`, 1, 1);
  return tf.add(x, h);
}

function runStage(x: tf.Tensor, p: Params, prefix: string, count: number): tf.Tensor {
  for (let j = 0; j < count; j++) {
    x = residualBlock(x, p, `${prefix}.block${j}`);
  }
  return x;
}

export function runSource8(x: tf.Tensor, p: Params): tf.Tensor {
  x = tf.relu(convNamed(x, p, "source8.conv0", 2, 1));
  x = tf.relu(convNamed(x, p, "source8.conv1", 2, 1));
  return convNamed(x, p, "source8.conv2", 2, 1);
}

export function runSource16(x: tf.Tensor, p: Params): tf.Tensor {
  x = tf.relu(convNamed(x, p, "source16.conv0", 2, 1));
  x = tf.relu(convNamed(x, p, "source16.conv1", 2, 1));
  x = tf.relu(convNamed(x, p, "source16.conv2", 2, 1));
  return convNamed(x, p, "source16.conv3", 2, 1);
}

export function fuseSources(s8: tf.Tensor, s16: tf.Tensor, p: Params): tf.Tensor {
  const down = convNamed(s8, p, "adapter.down", 2, 1);
  const keep = convNamed(s16, p, "adapter.conv", 1, 1);
  return tf.concat([down, keep], 3);
}

export function runAnalysis(latent: tf.Tensor, p: Params, cfg: ModelConfig): tf.Tensor {
  let x = runStage(latent, p, "analysis.stage0", cfg.gaBlocks[0]);
  x = convNamed(x, p, "analysis.down0", 2, 1);
  x = runStage(x, p, "analysis.stage1", cfg.gaBlocks[1]);
  x = convNamed(x, p, "analysis.down1", 2, 1);
  return runStage(x, p, "analysis.stage2", cfg.gaBlocks[2]);
}

function runExpander(code: tf.Tensor, p: Params, prefix: string, cfg: ModelConfig): tf.Tensor {
  let x = runStage(code, p, `${prefix}.stage0`, cfg.gsBlocks[0]);
  x = pixelShuffle(convNamed(x, p, `${prefix}.up0`), 2);
  x = runStage(x, p, `${prefix}.stage1`, cfg.gsBlocks[1]);
  x = pixelShuffle(convNamed(x, p, `${prefix}.up1`), 2);
  x = runStage(x, p, `${prefix}.stage2`, cfg.gsBlocks[2]);
  return pixelShuffle(convNamed(x, p, `${prefix}.up2`), 2);
}

export function runSynthesis(code: tf.Tensor, p: Params, cfg: ModelConfig): tf.Tensor {
  return runExpander(code, p, "synthesis", cfg);
}

export function runAuxDecoder(code: tf.Tensor, p: Params, cfg: ModelConfig): tf.Tensor {
  return runExpander(code, p, "auxdec", cfg);
}

export function runHyperAnalysis(code: tf.Tensor, p: Params, cfg: ModelConfig): tf.Tensor {
  let x = convNamed(code, p, "hyper_enc.down0", 2, 1);
  x = runStage(x, p, "hyper_enc.stage0", cfg.haBlocks);
  return convNamed(x, p, "hyper_enc.down1", 2, 1);
}

export function runHyperSynthesis(zhat: tf.Tensor, p: Params, cfg: ModelConfig): tf.Tensor {
  let x = pixelShuffle(convNamed(zhat, p, "hyper_dec.up0"), 2);
  x = runStage(x, p, "hyper_dec.stage0", cfg.hsBlocks);
  return pixelShuffle(convNamed(x, p, "hyper_dec.up1"), 2);
}

/** Per-step parameter head: returns [mean field, raw scale field]. */
export function runContextStep(
  ctxField: tf.Tensor,
  p: Params,
  step: number,
  cfg: ModelConfig
): [tf.Tensor, tf.Tensor] {
  let x = convNamed(ctxField, p, `ctx.adapt_in${step}`);
  x = runStage(x, p, "ctx.shared", cfg.ctxBlocks);
  x = convNamed(x, p, `ctx.adapt_out${step}`);
  const [n, h, w] = x.shape as number[];
  const cy = cfg.codeChannels;
  const mean = tf.slice(x, [0, 0, 0, 0], [n, h, w, cy]);
  const scaleRaw = tf.slice(x, [0, 0, 0, cy], [n, h, w, cy]);
  return [mean, scaleRaw];
}

export function runLrp(stacked: tf.Tensor, p: Params, step: number): tf.Tensor {
  let x = convNamed(stacked, p, `lrp${step}.c1`);
  x = tf.relu(x);
  return convNamed(x, p, `lrp${step}.c2`, 1, 1);
}

export function runPixelDecoder(latent: tf.Tensor, p: Params): tf.Tensor {
  let x = tf.relu(convNamed(latent, p, "pixel_dec.conv0", 1, 1));
  x = convNamed(x, p, "pixel_dec.conv1", 1, 1);
  return pixelShuffle(x, 8);
}

/** Cumulative signal retention of the linear noise schedule at step `t`. */
export function alphaBar(steps: number, t: number): number {
  if (t < 0 || t >= steps) {
    throw new Error(`schedule step ${t} out of range`);
  }
  let prod = 1;
  for (let i = 0; i <= t; i++) {
    const beta = steps === 1 ? 1e-4 : 1e-4 + (i * (0.02 - 1e-4)) / (steps - 1);
    prod *= 1 - beta;
  }
  return prod;
}
