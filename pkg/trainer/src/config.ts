/**
 * Configuration handling for the trainer.
 *
 * Two kinds of settings live in one key=value file: model keys (the same
 * names the codec stores inside a weight file) and trainer keys (steps,
 * learning rates, lambda ladder, data source). The parser matches the
 * codec's reader: one `key=value` per line, `#` comments, blank lines
 * skipped, later duplicates win.
 */

import * as fs from "node:fs";
import { z } from "zod";

export function parseKv(text: string): Map<string, string> {
  const out = new Map<string, string>();
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const stripped = lines[i].trim();
    if (stripped === "" || stripped.startsWith("#")) {
      continue;
    }
    const eq = stripped.indexOf("=");
    if (eq < 0) {
      throw new Error(`line ${i + 1}: expected key=value, got ${JSON.stringify(stripped)}`);
    }
    out.set(stripped.slice(0, eq).trim(), stripped.slice(eq + 1).trim());
  }
  return out;
}

/**
 * Transform geometry for the small trained model. Every block is a
 * plain residual conv pair with relu and the guidance path is read at
 * the first schedule step, which keeps the whole forward graph inside
 * what this trainer implements.
 */
export interface ModelConfig {
  codeChannels: number;
  hyperChannels: number;
  diffusionChannels: number;
  src8Channels: number;
  src16Channels: number;
  src8Hidden: [number, number];
  src16Hidden: [number, number, number];
  adapterDownChannels: number;
  adapterConvChannels: number;
  gaChannels: [number, number, number];
  gaBlocks: [number, number, number];
  gsChannels: [number, number, number];
  gsBlocks: [number, number, number];
  haBlocks: number;
  hsBlocks: number;
  ctxChannels: number;
  ctxBlocks: number;
  pixHidden: number;
  predHidden: number;
  scheduleSteps: number;
  timestepIndex: number;
}

export const TOY_MODEL: ModelConfig = {
  codeChannels: 16,
  hyperChannels: 8,
  diffusionChannels: 4,
  src8Channels: 4,
  src16Channels: 12,
  src8Hidden: [8, 8],
  src16Hidden: [8, 8, 8],
  adapterDownChannels: 8,
  adapterConvChannels: 8,
  gaChannels: [16, 16, 16],
  gaBlocks: [1, 1, 1],
  gsChannels: [16, 12, 8],
  gsBlocks: [1, 1, 1],
  haBlocks: 1,
  hsBlocks: 1,
  ctxChannels: 32,
  ctxBlocks: 1,
  pixHidden: 8,
  predHidden: 8,
  scheduleSteps: 10,
  timestepIndex: 0,
};

function checkModel(cfg: ModelConfig): void {
  if (cfg.gaChannels[0] !== cfg.adapterDownChannels + cfg.adapterConvChannels) {
    throw new Error("first analysis width must equal the fused adapter width");
  }
  if (cfg.gaChannels[2] !== cfg.codeChannels) {
    throw new Error("last analysis width must equal code_channels");
  }
  if (cfg.gsChannels[0] !== cfg.codeChannels) {
    throw new Error("first synthesis width must equal code_channels");
  }
  if (cfg.timestepIndex < 0 || cfg.timestepIndex >= cfg.scheduleSteps) {
    throw new Error("timestep_index out of range");
  }
  const positive: Array<[string, number]> = [
    ["code_channels", cfg.codeChannels],
    ["hyper_channels", cfg.hyperChannels],
    ["diffusion_channels", cfg.diffusionChannels],
    ["ctx_channels", cfg.ctxChannels],
    ["pix_hidden", cfg.pixHidden],
    ["pred_hidden", cfg.predHidden],
  ];
  for (const [name, value] of positive) {
    if (!Number.isInteger(value) || value <= 0) {
      throw new Error(`${name} must be a positive integer`);
    }
  }
}

/**
 * Emit the model section in the codec's config syntax. Every key the
 * codec understands is written explicitly so a store built here never
 * picks up a codec-side default by omission.
 */
export function modelConfigText(cfg: ModelConfig): string {
  checkModel(cfg);
  const join = (xs: readonly number[]) => xs.join(",");
  const pairs: Array<[string, string]> = [
    ["code_channels", String(cfg.codeChannels)],
    ["hyper_channels", String(cfg.hyperChannels)],
    ["diffusion_channels", String(cfg.diffusionChannels)],
    ["src8_channels", String(cfg.src8Channels)],
    ["src16_channels", String(cfg.src16Channels)],
    ["src8_hidden", join(cfg.src8Hidden)],
    ["src16_hidden", join(cfg.src16Hidden)],
    ["adapter_down_channels", String(cfg.adapterDownChannels)],
    ["adapter_conv_channels", String(cfg.adapterConvChannels)],
    ["ga_channels", join(cfg.gaChannels)],
    ["ga_blocks", join(cfg.gaBlocks)],
    ["ga_kinds", "plain-conv,plain-conv,plain-conv"],
    ["gs_channels", join(cfg.gsChannels)],
    ["gs_blocks", join(cfg.gsBlocks)],
    ["gs_kinds", "plain-conv,plain-conv,plain-conv"],
    ["ha_blocks", String(cfg.haBlocks)],
    ["ha_kind", "plain-conv"],
    ["hs_blocks", String(cfg.hsBlocks)],
    ["hs_kind", "plain-conv"],
    ["ctx_channels", String(cfg.ctxChannels)],
    ["ctx_blocks", String(cfg.ctxBlocks)],
    ["ctx_kind", "plain-conv"],
    ["band_kernel", "11"],
    ["gate_kernel", "7"],
    ["gate_expansion", "2"],
    ["pix_hidden", String(cfg.pixHidden)],
    ["pred_hidden", String(cfg.predHidden)],
    ["activation", "relu"],
    ["schedule_steps", String(cfg.scheduleSteps)],
    ["timestep_index", String(cfg.timestepIndex)],
  ];
  return pairs.map(([k, v]) => `${k}=${v}\n`).join("");
}

const LADDER_CHOICES = [2, 3, 4, 6, 8, 12, 16, 24, 32] as const;

const trainSchema = z
  .object({
    lambdaBase: z.number().positive().default(0.5),
    ladder: z
      .array(z.number())
      .min(1)
      .default([2, 8, 32])
      .refine((xs) => xs.every((x) => (LADDER_CHOICES as readonly number[]).includes(x)), {
        message: `ladder values must come from {${LADDER_CHOICES.join(", ")}}`,
      })
      .refine((xs) => xs.every((x, i) => i === 0 || xs[i - 1] < x), {
        message: "ladder must be strictly ascending",
      }),
    stepsStage1: z.number().int().positive().default(2000),
    stepsStage2: z.number().int().positive().default(1500),
    stepsContinuity: z.number().int().nonnegative().default(1500),
    patchSize: z
      .number()
      .int()
      .default(128)
      .refine((x) => x >= 128 && x <= 512 && x % 128 === 0, {
        message: "patch_size must be a multiple of 128 between 128 and 512",
      }),
    lrStart: z.number().positive().default(1e-3),
    lrEnd: z.number().positive().default(1e-4),
    lrLadder: z.number().positive().default(4e-4),
    seed: z.number().int().default(17),
    dataSource: z.string().default("synthetic"),
    outDir: z.string().default("artifacts"),
  })
  .refine((c) => c.lrEnd <= c.lrStart, { message: "lr_end must not exceed lr_start" });

export type TrainConfig = z.infer<typeof trainSchema>;

const TRAIN_KEYS: Record<string, keyof TrainConfig> = {
  lambda_base: "lambdaBase",
  ladder: "ladder",
  steps_stage1: "stepsStage1",
  steps_stage2: "stepsStage2",
  steps_continuity: "stepsContinuity",
  patch_size: "patchSize",
  lr_start: "lrStart",
  lr_end: "lrEnd",
  lr_ladder: "lrLadder",
  seed: "seed",
  data_source: "dataSource",
  out_dir: "outDir",
};

/** Build a TrainConfig from parsed key=value pairs; unknown keys are ignored. */
export function trainConfigFrom(kv: Map<string, string>): TrainConfig {
  const raw: Record<string, unknown> = {};
  for (const [key, field] of Object.entries(TRAIN_KEYS)) {
    const value = kv.get(key);
    if (value === undefined) {
      continue;
    }
    if (field === "dataSource" || field === "outDir") {
      raw[field] = value;
    } else if (field === "ladder") {
      raw[field] = value.split(",").map((part) => {
        const n = Number(part.trim());
        if (!Number.isFinite(n)) {
          throw new Error(`ladder entry ${JSON.stringify(part)} is not a number`);
        }
        return n;
      });
    } else {
      const n = Number(value);
      if (!Number.isFinite(n)) {
        throw new Error(`${key}=${value} is not a number`);
      }
      raw[field] = n;
    }
  }
  return trainSchema.parse(raw);
}

export function loadTrainConfig(filePath?: string): TrainConfig {
  const kv = filePath ? parseKv(fs.readFileSync(filePath, "utf-8")) : new Map<string, string>();
  return trainConfigFrom(kv);
}
