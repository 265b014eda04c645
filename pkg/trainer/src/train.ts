/**
 * Single-process training loop.
 *
 * The objective is lambda * bits-per-pixel + 2 * MSE. Rate uses the
 * additive-uniform-noise relaxation: instead of rounding, latents are
 * jittered by u ~ U[-0.5, 0.5) and charged the probability mass their
 * rounded symbol would get, which makes the codelength differentiable.
 * The jittered latents also feed the decode path, so the transforms
 * train against the same perturbation the rate sees.
 */

import * as tf from "@tensorflow/tfjs";
import { ModelConfig } from "./config";
import { mulberry32 } from "./data";
import {
  clampSigma,
  gatherGroup,
  groupMask,
  GROUP_OFFSETS,
  LRP_BOUND,
  mergeGroups,
  overlayGroups,
  placeGroup,
  relaxedBits,
} from "./entropy";
import {
  alphaBar,
  fuseSources,
  Params,
  runAnalysis,
  runAuxDecoder,
  runContextStep,
  runHyperAnalysis,
  runHyperSynthesis,
  runLrp,
  runPixelDecoder,
  runSource8,
  runSource16,
  runSynthesis,
} from "./nets";

export const DISTORTION_WEIGHT = 2;

/**
 * Scales are floored here, in the loss only, well above the coder's 0.04
 * clip. Under the noise relaxation a near-collapsed scale prices every
 * residual inside the rounding interval at almost zero bits, yet at
 * measurement time the same scale leaves any nonzero symbol with floored
 * probability mass, about 16 bits. Keeping trained scales at or above 0.3
 * caps that cliff near 4 bits, so the relaxed rate stays an honest
 * estimate of what rounding will cost.
 */
export const TRAIN_SCALE_FLOOR = 0.3;

/** Adam with a per-step learning rate; moments keyed by variable name. */
export class Adam {
  private t = 0;
  private readonly m = new Map<string, tf.Tensor>();
  private readonly v = new Map<string, tf.Tensor>();

  constructor(
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly eps = 1e-8
  ) {}

  step(lr: number, vars: tf.Variable[], lossFn: () => tf.Scalar): number {
    const { value, grads } = tf.variableGrads(lossFn, vars);
    this.t += 1;
    const mScale = 1 / (1 - Math.pow(this.beta1, this.t));
    const vScale = 1 / (1 - Math.pow(this.beta2, this.t));
    for (const variable of vars) {
      const g = grads[variable.name];
      if (g == null) {
        throw new Error(`no gradient reached ${variable.name}`);
      }
      const mOld = this.m.get(variable.name);
      const vOld = this.v.get(variable.name);
      const mNew = tf.tidy(() =>
        mOld ? tf.add(tf.mul(mOld, this.beta1), tf.mul(g, 1 - this.beta1)) : tf.mul(g, 1 - this.beta1)
      );
      const vNew = tf.tidy(() =>
        vOld
          ? tf.add(tf.mul(vOld, this.beta2), tf.mul(tf.square(g), 1 - this.beta2))
          : tf.mul(tf.square(g), 1 - this.beta2)
      );
      tf.tidy(() => {
        const update = tf.div(tf.mul(mNew, lr * mScale), tf.add(tf.sqrt(tf.mul(vNew, vScale)), this.eps));
        variable.assign(tf.sub(variable, update));
      });
      mOld?.dispose();
      vOld?.dispose();
      this.m.set(variable.name, mNew);
      this.v.set(variable.name, vNew);
      g.dispose();
    }
    const lossVal = (value.dataSync() as Float32Array)[0];
    value.dispose();
    return lossVal;
  }

  dispose(): void {
    for (const t of this.m.values()) t.dispose();
    for (const t of this.v.values()) t.dispose();
    this.m.clear();
    this.v.clear();
  }
}

export interface LossStats {
  bpp: number;
  mse: number;
}

/**
 * Full relaxed objective for one patch. `noiseFor` is consulted once
 * for the hyper code and once per group, in coding order, so a seeded
 * caller gets reproducible jitter.
 */
export function lossParts(
  p: Params,
  cfg: ModelConfig,
  x: tf.Tensor,
  lambda: number,
  noiseFor: (shape: number[]) => tf.Tensor,
  out?: LossStats
): tf.Scalar {
  const [, height, width] = x.shape as number[];
  const latent = fuseSources(runSource8(x, p), runSource16(x, p), p);
  const y = runAnalysis(latent, p, cfg);
  const z = runHyperAnalysis(y, p, cfg);

  const loc = p.get("hyper_prior.loc");
  const priorScale = tf.maximum(clampSigma(p.get("hyper_prior.scale")), TRAIN_SCALE_FLOOR);
  const uz = noiseFor(z.shape as number[]);
  let bits = relaxedBits(z, loc, priorScale, uz);

  // At 256-multiple sizes the hyper path inverts exactly and this is a
  // no-op; smaller training patches leave the upsampled field larger
  // than the code, so align by cropping.
  const [, yh, yw] = y.shape as number[];
  let features = runHyperSynthesis(tf.add(z, uz), p, cfg);
  if ((features.shape as number[])[1] !== yh || (features.shape as number[])[2] !== yw) {
    features = tf.slice(features, [0, 0, 0, 0], [1, yh, yw, cfg.codeChannels]);
  }
  const [, fh, fw] = features.shape as number[];
  const decoded: tf.Tensor[] = [];
  for (let step = 0; step < GROUP_OFFSETS.length; step++) {
    const ctx = overlayGroups(features, decoded);
    const [meanField, scaleField] = runContextStep(ctx, p, step, cfg);
    const mu = gatherGroup(meanField, step);
    const sigma = tf.maximum(clampSigma(gatherGroup(scaleField, step)), TRAIN_SCALE_FLOOR);
    const yg = gatherGroup(y, step);
    const u = noiseFor(yg.shape as number[]);
    bits = tf.add(bits, relaxedBits(yg, mu, sigma, u));

    const noisyGroup = tf.add(yg, u);
    const mask = groupMask(1, fh, fw, step);
    const ctxHere = tf.add(tf.mul(ctx, tf.sub(1, mask)), placeGroup(noisyGroup, step));
    const residual = runLrp(tf.concat([ctxHere, features], 3), p, step);
    const refined = tf.add(noisyGroup, tf.mul(LRP_BOUND, tf.tanh(gatherGroup(residual, step))));
    decoded.push(refined);
  }

  const yHat = mergeGroups(decoded);
  const noisy = runSynthesis(yHat, p, cfg);
  const guidance = runAuxDecoder(yHat, p, cfg);
  const keep = Math.sqrt(alphaBar(cfg.scheduleSteps, cfg.timestepIndex));
  const xHat = runPixelDecoder(tf.add(tf.div(noisy, keep), guidance), p);

  const mse = tf.mean(tf.square(tf.sub(xHat, x)));
  const bpp = tf.div(bits, height * width);
  if (out) {
    out.bpp = (bpp.dataSync() as Float32Array)[0];
    out.mse = (mse.dataSync() as Float32Array)[0];
  }
  return tf.add(tf.mul(bpp, lambda), tf.mul(mse, DISTORTION_WEIGHT)) as tf.Scalar;
}

export interface PhaseOptions {
  lambda: number;
  steps: number;
  lrStart: number;
  lrEnd: number;
  noiseSeed: number;
  label: string;
  sample: (step: number) => tf.Tensor;
  log?: (line: string) => void;
  logEvery?: number;
}

export interface PhaseResult {
  label: string;
  lambda: number;
  steps: number;
  loss0: number;
  lossFinal: number;
  bppFinal: number;
  mseFinal: number;
  seconds: number;
}

function mean(xs: number[]): number {
  return xs.reduce((a, b) => a + b, 0) / xs.length;
}

export function runPhase(p: Params, cfg: ModelConfig, opts: PhaseOptions): PhaseResult {
  const vars = p.trainables(["noise_pred."]);
  const adam = new Adam();
  const losses: number[] = [];
  const bpps: number[] = [];
  const mses: number[] = [];
  const t0 = Date.now();
  try {
    for (let step = 0; step < opts.steps; step++) {
      const frac = opts.steps === 1 ? 0 : step / (opts.steps - 1);
      const lr = opts.lrStart + (opts.lrEnd - opts.lrStart) * frac;
      const rng = mulberry32((opts.noiseSeed ^ Math.imul(step + 1, 0x85ebca6b)) >>> 0);
      const noiseFor = (shape: number[]) => {
        const size = shape.reduce((a, b) => a * b, 1);
        const data = new Float32Array(size);
        for (let i = 0; i < size; i++) {
          data[i] = rng() - 0.5;
        }
        return tf.tensor(data, shape);
      };
      const x = opts.sample(step);
      const stats: LossStats = { bpp: 0, mse: 0 };
      const loss = adam.step(lr, vars, () => lossParts(p, cfg, x, opts.lambda, noiseFor, stats));
      x.dispose();
      if (!Number.isFinite(loss)) {
        throw new Error(
          `training diverged: loss=${loss} at step ${step} ` +
            `(phase ${opts.label}, lambda=${opts.lambda}, lr=${lr.toExponential(3)}, ` +
            `bpp=${stats.bpp}, mse=${stats.mse})`
        );
      }
      losses.push(loss);
      bpps.push(stats.bpp);
      mses.push(stats.mse);
      const every = opts.logEvery ?? 100;
      if (opts.log && (step % every === 0 || step === opts.steps - 1)) {
        const dt = ((Date.now() - t0) / 1000).toFixed(1);
        opts.log(
          `[${opts.label}] step ${step}/${opts.steps} loss=${loss.toFixed(4)} ` +
            `bpp=${stats.bpp.toFixed(4)} mse=${stats.mse.toFixed(5)} lr=${lr.toExponential(2)} ${dt}s`
        );
      }
    }
  } finally {
    adam.dispose();
  }
  const tail = Math.min(50, losses.length);
  return {
    label: opts.label,
    lambda: opts.lambda,
    steps: opts.steps,
    loss0: losses[0],
    lossFinal: mean(losses.slice(-tail)),
    bppFinal: mean(bpps.slice(-tail)),
    mseFinal: mean(mses.slice(-tail)),
    seconds: (Date.now() - t0) / 1000,
  };
}
