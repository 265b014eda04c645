/**
 * Rounded-symbol rate measurement for a frozen model.
 *
 * Mirrors the codec's coded path: hyper symbols round against the
 * factorized prior, the context heads run on reconstructed values, and
 * every group is refined by its residual head before joining the
 * context for the next step. Bits are the ideal Gaussian codelengths of
 * the rounded symbols with the coder's probability floor, summed in
 * double precision.
 */

import * as tf from "@tensorflow/tfjs";
import { ModelConfig } from "./config";
import {
  gatherGroup,
  GROUP_OFFSETS,
  groupMask,
  LRP_BOUND,
  overlayGroups,
  placeGroup,
  roundHalfAway,
  SUPPORT_HI,
  SUPPORT_LO,
  symbolBits,
} from "./entropy";
import {
  fuseSources,
  Params,
  runAnalysis,
  runContextStep,
  runHyperAnalysis,
  runHyperSynthesis,
  runLrp,
  runSource8,
  runSource16,
} from "./nets";

export interface RateReport {
  bits: number;
  hyperBits: number;
  codeBits: number;
  symbols: number;
  escapes: number;
}

/** Measure the coded rate of one image tensor [1, h, w, 3] in [0, 1]. */
export function measureRate(p: Params, cfg: ModelConfig, x: tf.Tensor): RateReport {
  return tf.tidy(() => {
    const latent = fuseSources(runSource8(x, p), runSource16(x, p), p);
    const y = runAnalysis(latent, p, cfg);
    const z = runHyperAnalysis(y, p, cfg);

    const cz = cfg.hyperChannels;
    const zArr = z.dataSync() as Float32Array;
    const loc = p.get("hyper_prior.loc").dataSync() as Float32Array;
    const scale = p.get("hyper_prior.scale").dataSync() as Float32Array;
    let hyperBits = 0;
    let escapes = 0;
    const zHatArr = new Float32Array(zArr.length);
    for (let i = 0; i < zArr.length; i++) {
      const c = i % cz;
      const sym = roundHalfAway(zArr[i] - loc[c]);
      hyperBits += symbolBits(sym, scale[c]);
      if (sym < SUPPORT_LO || sym > SUPPORT_HI) {
        escapes += 1;
      }
      zHatArr[i] = sym + loc[c];
    }
    const zHat = tf.tensor(zHatArr, z.shape as number[]);

    const [, yh, yw] = y.shape as number[];
    let features = runHyperSynthesis(zHat, p, cfg);
    if ((features.shape as number[])[1] !== yh || (features.shape as number[])[2] !== yw) {
      features = tf.slice(features, [0, 0, 0, 0], [1, yh, yw, cfg.codeChannels]);
    }
    const [, fh, fw] = features.shape as number[];
    const decoded: tf.Tensor[] = [];
    let codeBits = 0;
    let symbols = zArr.length;
    for (let step = 0; step < GROUP_OFFSETS.length; step++) {
      const ctx = overlayGroups(features, decoded);
      const [meanField, scaleField] = runContextStep(ctx, p, step, cfg);
      const muArr = gatherGroup(meanField, step).dataSync() as Float32Array;
      const sgArr = gatherGroup(scaleField, step).dataSync() as Float32Array;
      const ygArr = gatherGroup(y, step).dataSync() as Float32Array;
      const recArr = new Float32Array(muArr.length);
      for (let i = 0; i < muArr.length; i++) {
        const sym = roundHalfAway(ygArr[i] - muArr[i]);
        codeBits += symbolBits(sym, sgArr[i]);
        if (sym < SUPPORT_LO || sym > SUPPORT_HI) {
          escapes += 1;
        }
        recArr[i] = sym + muArr[i];
      }
      symbols += muArr.length;
      const groupShape = [1, fh / 2, fw / 2, cfg.codeChannels];
      const recon = tf.tensor(recArr, groupShape);
      const mask = groupMask(1, fh, fw, step);
      const ctxHere = tf.add(tf.mul(ctx, tf.sub(1, mask)), placeGroup(recon, step));
      const residual = runLrp(tf.concat([ctxHere, features], 3), p, step);
      const refined = tf.add(recon, tf.mul(LRP_BOUND, tf.tanh(gatherGroup(residual, step))));
      decoded.push(refined);
    }
    return { bits: hyperBits + codeBits, hyperBits, codeBits, symbols, escapes };
  });
}
