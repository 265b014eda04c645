/**
 * Conditional Gaussian rate model over the four-phase checkerboard
 * partition of the code.
 *
 * The code grid splits into four interleaved groups by (row, column)
 * parity, coded in a fixed order so each step conditions on everything
 * already decoded. Training replaces rounding with additive uniform
 * noise; evaluation rounds and charges each symbol its ideal Gaussian
 * codelength with the same probability floor the range coder enforces
 * by giving every bucket at least one count.
 */

import * as tf from "@tensorflow/tfjs";

export const GROUP_OFFSETS: ReadonlyArray<readonly [number, number]> = [
  [0, 0],
  [1, 1],
  [0, 1],
  [1, 0],
];

export const SIGMA_MIN = 0.04;
export const SIGMA_MAX = 64.0;
export const SUPPORT_LO = -127;
export const SUPPORT_HI = 127;
export const ESCAPE_RAW_BITS = 16;
export const PROB_FLOOR = 2 ** -16;
export const LRP_BOUND = 0.5;

/** Pull one parity group: x[:, dy::2, dx::2, :]. */
export function gatherGroup(x: tf.Tensor, step: number): tf.Tensor {
  const [dy, dx] = GROUP_OFFSETS[step];
  const [n, h, w, c] = x.shape as number[];
  const grid = tf.reshape(x, [n, h / 2, 2, w / 2, 2, c]);
  const part = tf.slice(grid, [0, 0, dy, 0, dx, 0], [n, h / 2, 1, w / 2, 1, c]);
  return tf.reshape(part, [n, h / 2, w / 2, c]);
}

/** Scatter a group back to full resolution with zeros elsewhere. */
export function placeGroup(g: tf.Tensor, step: number): tf.Tensor {
  const [dy, dx] = GROUP_OFFSETS[step];
  const [n, gh, gw, c] = g.shape as number[];
  const lifted = tf.reshape(g, [n, gh, 1, gw, 1, c]);
  const spread = tf.pad(lifted, [
    [0, 0],
    [0, 0],
    [dy, 1 - dy],
    [0, 0],
    [dx, 1 - dx],
    [0, 0],
  ]);
  return tf.reshape(spread, [n, 2 * gh, 2 * gw, c]);
}

/** 1 at the group's positions, 0 elsewhere; single channel, broadcasts. */
export function groupMask(n: number, h: number, w: number, step: number): tf.Tensor {
  return placeGroup(tf.ones([n, h / 2, w / 2, 1]), step);
}

/** Context field: features with already-decoded groups written over them. */
export function overlayGroups(features: tf.Tensor, decoded: ReadonlyArray<tf.Tensor>): tf.Tensor {
  const [n, h, w] = features.shape as number[];
  let ctx = features;
  for (let step = 0; step < decoded.length; step++) {
    const mask = groupMask(n, h, w, step);
    ctx = tf.add(tf.mul(ctx, tf.sub(1, mask)), placeGroup(decoded[step], step));
  }
  return ctx;
}

/** Reassemble the full code from all four decoded groups. */
export function mergeGroups(decoded: ReadonlyArray<tf.Tensor>): tf.Tensor {
  if (decoded.length !== GROUP_OFFSETS.length) {
    throw new Error(`need ${GROUP_OFFSETS.length} groups, got ${decoded.length}`);
  }
  let out = placeGroup(decoded[0], 0);
  for (let step = 1; step < decoded.length; step++) {
    out = tf.add(out, placeGroup(decoded[step], step));
  }
  return out;
}

export function clampSigma(raw: tf.Tensor): tf.Tensor {
  return tf.minimum(tf.maximum(raw, SIGMA_MIN), SIGMA_MAX);
}

export function normalCdf(x: tf.Tensor): tf.Tensor {
  return tf.mul(0.5, tf.add(1, tf.erf(tf.div(x, Math.SQRT2))));
}

/**
 * Differentiable codelength: values are jittered by `noise` (uniform in
 * [-0.5, 0.5)) and charged the mass a rounded symbol would get under
 * N(mean, sigma^2), floored like the coder's tables. Returns total bits.
 */
export function relaxedBits(
  values: tf.Tensor,
  mean: tf.Tensor,
  sigma: tf.Tensor,
  noise: tf.Tensor
): tf.Tensor {
  const centered = tf.sub(tf.add(values, noise), mean);
  const upper = normalCdf(tf.div(tf.add(centered, 0.5), sigma));
  const lower = normalCdf(tf.div(tf.sub(centered, 0.5), sigma));
  const mass = tf.maximum(tf.sub(upper, lower), PROB_FLOOR);
  return tf.div(tf.neg(tf.sum(tf.log(mass))), Math.LN2);
}

// scalar double-precision pieces for the rounded (evaluation) path

/** Complementary error function, |relative error| < 1.2e-7. */
export function erfc(x: number): number {
  const z = Math.abs(x);
  const t = 1 / (1 + 0.5 * z);
  const ans =
    t *
    Math.exp(
      -z * z -
        1.26551223 +
        t *
          (1.00002368 +
            t *
              (0.37409196 +
                t *
                  (0.09678418 +
                    t *
                      (-0.18628806 +
                        t *
                          (0.27886807 +
                            t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))))
    );
  return x >= 0 ? ans : 2 - ans;
}

export function roundHalfAway(v: number): number {
  return Math.sign(v) * Math.floor(Math.abs(v) + 0.5);
}

/**
 * Ideal codelength in bits for one rounded, zero-centered symbol under
 * a clamped-scale Gaussian. Out-of-support symbols cost the escape
 * marker plus a fixed-width raw value. Tail masses are computed from
 * erfc directly so they stay accurate far from the mean.
 */
export function symbolBits(sym: number, sigmaRaw: number): number {
  const sigma = Math.min(Math.max(sigmaRaw, SIGMA_MIN), SIGMA_MAX);
  const denom = sigma * Math.SQRT2;
  if (sym < SUPPORT_LO || sym > SUPPORT_HI) {
    const escape = erfc((SUPPORT_HI + 0.5) / denom);
    return ESCAPE_RAW_BITS - Math.log2(Math.max(escape, PROB_FLOOR));
  }
  const a = Math.abs(sym);
  const mass =
    a === 0
      ? 1 - erfc(0.5 / denom)
      : 0.5 * (erfc((a - 0.5) / denom) - erfc((a + 0.5) / denom));
  return -Math.log2(Math.max(mass, PROB_FLOOR));
}
