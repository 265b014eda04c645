/**
 * Parameter inventory for the trained model: every name the codec will
 * request for a plain-conv configuration, with the store-side shape
 * (conv weights are [out, in, kh, kw], biases and the prior are flat).
 */

import { ModelConfig } from "./config";

export const CONTEXT_STEPS = 4;

export function schema(cfg: ModelConfig): Map<string, number[]> {
  const out = new Map<string, number[]>();
  const conv = (name: string, ci: number, co: number, k: number) => {
    out.set(`${name}.weight`, [co, ci, k, k]);
    out.set(`${name}.bias`, [co]);
  };
  const stage = (prefix: string, count: number, c: number) => {
    for (let j = 0; j < count; j++) {
      conv(`${prefix}.block${j}.c1`, c, c, 3);
      conv(`${prefix}.block${j}.c2`, c, c, 3);
    }
  };

  const [h1, h2] = cfg.src8Hidden;
  conv("source8.conv0", 3, h1, 3);
  conv("source8.conv1", h1, h2, 3);
  conv("source8.conv2", h2, cfg.src8Channels, 3);
  const [g1, g2, g3] = cfg.src16Hidden;
  conv("source16.conv0", 3, g1, 3);
  conv("source16.conv1", g1, g2, 3);
  conv("source16.conv2", g2, g3, 3);
  conv("source16.conv3", g3, cfg.src16Channels, 3);
  conv("adapter.down", cfg.src8Channels, cfg.adapterDownChannels, 3);
  conv("adapter.conv", cfg.src16Channels, cfg.adapterConvChannels, 3);

  const [a0, a1, a2] = cfg.gaChannels;
  stage("analysis.stage0", cfg.gaBlocks[0], a0);
  conv("analysis.down0", a0, a1, 3);
  stage("analysis.stage1", cfg.gaBlocks[1], a1);
  conv("analysis.down1", a1, a2, 3);
  stage("analysis.stage2", cfg.gaBlocks[2], a2);

  const [s0, s1, s2] = cfg.gsChannels;
  for (const prefix of ["synthesis", "auxdec"]) {
    stage(`${prefix}.stage0`, cfg.gsBlocks[0], s0);
    conv(`${prefix}.up0`, s0, 4 * s1, 1);
    stage(`${prefix}.stage1`, cfg.gsBlocks[1], s1);
    conv(`${prefix}.up1`, s1, 4 * s2, 1);
    stage(`${prefix}.stage2`, cfg.gsBlocks[2], s2);
    conv(`${prefix}.up2`, s2, 4 * cfg.diffusionChannels, 1);
  }

  const cy = cfg.codeChannels;
  const cz = cfg.hyperChannels;
  conv("hyper_enc.down0", cy, cz, 3);
  stage("hyper_enc.stage0", cfg.haBlocks, cz);
  conv("hyper_enc.down1", cz, cz, 3);
  conv("hyper_dec.up0", cz, 4 * cz, 1);
  stage("hyper_dec.stage0", cfg.hsBlocks, cz);
  conv("hyper_dec.up1", cz, 4 * cy, 1);

  for (let i = 0; i < CONTEXT_STEPS; i++) {
    conv(`ctx.adapt_in${i}`, cy, cfg.ctxChannels, 1);
    conv(`ctx.adapt_out${i}`, cfg.ctxChannels, 2 * cy, 1);
    conv(`lrp${i}.c1`, 2 * cy, cy, 1);
    conv(`lrp${i}.c2`, cy, cy, 3);
  }
  stage("ctx.shared", cfg.ctxBlocks, cfg.ctxChannels);

  out.set("hyper_prior.loc", [cz]);
  out.set("hyper_prior.scale", [cz]);

  conv("pixel_dec.conv0", cfg.diffusionChannels, cfg.pixHidden, 3);
  conv("pixel_dec.conv1", cfg.pixHidden, 3 * 64, 3);
  conv("noise_pred.conv0", cfg.diffusionChannels, cfg.predHidden, 3);
  conv("noise_pred.conv1", cfg.predHidden, cfg.diffusionChannels, 3);
  return out;
}
