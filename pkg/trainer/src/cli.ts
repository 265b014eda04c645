#!/usr/bin/env node
/**
 * Command line entry point: train the ladder and lay down every
 * artifact the evaluation side consumes (weight stores, the fixed eval
 * and holdout images, measured rates, a run summary).
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { ModelConfig, parseKv, TOY_MODEL, TrainConfig, trainConfigFrom } from "./config";
import { listPpmFiles, readPpm, synthPatch, writePpm } from "./data";
import { measureRate } from "./eval";
import { exportStore } from "./export";
import { initParams, Params } from "./nets";
import { PhaseResult, runPhase } from "./train";

function patchTensor(rgb: Uint8Array, height: number, width: number): tf.Tensor {
  const data = new Float32Array(rgb.length);
  for (let i = 0; i < rgb.length; i++) {
    data[i] = rgb[i] / 255;
  }
  return tf.tensor(data, [1, height, width, 3]);
}

function makeSampler(tcfg: TrainConfig, indexBase: number): (step: number) => tf.Tensor {
  const size = tcfg.patchSize;
  if (tcfg.dataSource === "synthetic") {
    return (step) => patchTensor(synthPatch(tcfg.seed, indexBase + step, size, size), size, size);
  }
  const files = listPpmFiles(tcfg.dataSource);
  if (files.length === 0) {
    throw new Error(`no .ppm files under ${tcfg.dataSource}`);
  }
  return (step) => {
    const { height, width, rgb } = readPpm(files[(indexBase + step) % files.length]);
    if (height < size || width < size) {
      throw new Error(`${files[(indexBase + step) % files.length]} is smaller than the patch size`);
    }
    const y0 = (height - size) >> 1;
    const x0 = (width - size) >> 1;
    const crop = new Uint8Array(size * size * 3);
    for (let y = 0; y < size; y++) {
      const src = ((y0 + y) * width + x0) * 3;
      crop.set(rgb.subarray(src, src + size * 3), y * size * 3);
    }
    return patchTensor(crop, size, size);
  };
}

interface EvalImageSpec {
  file: string;
  height: number;
  width: number;
  seedOffset: number;
  index: number;
}

/** Fixed plan: mostly square, a couple of tall/wide cases, all 256-multiples. */
function evalPlan(): EvalImageSpec[] {
  const plan: EvalImageSpec[] = [];
  for (let i = 0; i < 8; i++) {
    const height = i === 4 || i === 5 ? 512 : 256;
    const width = i === 6 || i === 7 ? 512 : 256;
    plan.push({ file: `eval/img${i}.ppm`, height, width, seedOffset: 1000, index: i });
  }
  return plan;
}

function holdoutPlan(): EvalImageSpec[] {
  const plan: EvalImageSpec[] = [];
  for (let i = 0; i < 16; i++) {
    const file = `holdout/p${String(i).padStart(2, "0")}.ppm`;
    plan.push({ file, height: 256, width: 256, seedOffset: 2000, index: i });
  }
  return plan;
}

function writeImages(outDir: string, seed: number, plan: EvalImageSpec[]): void {
  for (const spec of plan) {
    const rgb = synthPatch(seed + spec.seedOffset, spec.index, spec.height, spec.width);
    writePpm(path.join(outDir, spec.file), spec.height, spec.width, rgb);
  }
}

function measureHoldout(p: Params, mcfg: ModelConfig, outDir: string, plan: EvalImageSpec[]) {
  const patches = [];
  for (const spec of plan) {
    const { height, width, rgb } = readPpm(path.join(outDir, spec.file));
    const x = patchTensor(rgb, height, width);
    const r = measureRate(p, mcfg, x);
    x.dispose();
    patches.push({ file: spec.file, ...r });
  }
  return patches;
}

interface TrainCliArgs {
  config?: string;
  out?: string;
  seed?: number;
  stepsStage1?: number;
  stepsStage2?: number;
  stepsContinuity?: number;
  patch?: number;
  ladder?: string;
  lambdaBase?: number;
  data?: string;
}

function resolveConfig(argv: TrainCliArgs): TrainConfig {
  const kv = argv.config ? parseKv(fs.readFileSync(argv.config, "utf-8")) : new Map<string, string>();
  const put = (key: string, v: number | string | undefined) => {
    if (v !== undefined) {
      kv.set(key, String(v));
    }
  };
  put("out_dir", argv.out);
  put("seed", argv.seed);
  put("steps_stage1", argv.stepsStage1);
  put("steps_stage2", argv.stepsStage2);
  put("steps_continuity", argv.stepsContinuity);
  put("patch_size", argv.patch);
  put("ladder", argv.ladder);
  put("lambda_base", argv.lambdaBase);
  put("data_source", argv.data);
  return trainConfigFrom(kv);
}

function runTrain(argv: TrainCliArgs): void {
  tf.enableProdMode();
  const tcfg = resolveConfig(argv);
  const mcfg = TOY_MODEL;
  const outDir = tcfg.outDir;
  const t0 = Date.now();
  const log = (line: string) => console.log(line);

  tf.scalar(0).dispose(); // touch the engine so getBackend() reports the resolved backend
  log(`backend=${tf.getBackend()} patch=${tcfg.patchSize} seed=${tcfg.seed}`);
  log(`lambda_base=${tcfg.lambdaBase} ladder=[${tcfg.ladder.join(", ")}] out=${outDir}`);

  fs.mkdirSync(outDir, { recursive: true });
  const evalImages = evalPlan();
  const holdout = holdoutPlan();
  writeImages(outDir, tcfg.seed, evalImages);
  writeImages(outDir, tcfg.seed, holdout);
  log(`wrote ${evalImages.length} eval images and ${holdout.length} holdout patches`);

  const p = initParams(mcfg, tcfg.seed);
  const phases: PhaseResult[] = [];
  const stores: Record<string, string> = {};

  const stage1 = runPhase(p, mcfg, {
    lambda: tcfg.lambdaBase,
    steps: tcfg.stepsStage1,
    lrStart: tcfg.lrStart,
    lrEnd: tcfg.lrEnd,
    noiseSeed: tcfg.seed + 1,
    label: "stage1",
    sample: makeSampler(tcfg, 0),
    log,
  });
  phases.push(stage1);

  const baseId = exportStore(p, mcfg, [["lambda_target", String(tcfg.lambdaBase)]], path.join(outDir, "base.scwt"));
  stores["base.scwt"] = baseId.toString("hex");
  log(`exported base.scwt id=${stores["base.scwt"]}`);

  const rates = measureHoldout(p, mcfg, outDir, holdout);
  fs.writeFileSync(
    path.join(outDir, "rates.json"),
    JSON.stringify({ store: "base.scwt", patches: rates }, null, 2)
  );
  const meanBits = rates.reduce((a, r) => a + r.bits, 0) / rates.length;
  log(`holdout mean rate ${(meanBits / (256 * 256)).toFixed(4)} bpp over ${rates.length} patches`);

  // every retune restarts from the same snapshot AND consumes the same
  // patch and noise streams, so the rate target is the only thing that
  // differs between the exported ladder models
  const snapshot = p.snapshot();
  for (let k = 0; k < tcfg.ladder.length; k++) {
    const lambda = tcfg.ladder[k];
    p.restore(snapshot);
    const phase = runPhase(p, mcfg, {
      lambda,
      steps: tcfg.stepsStage2,
      lrStart: tcfg.lrLadder,
      lrEnd: tcfg.lrEnd,
      noiseSeed: tcfg.seed + 100,
      label: `lambda${lambda}`,
      sample: makeSampler(tcfg, 10_000),
      log,
    });
    phases.push(phase);
    const file = `lambda${lambda}.scwt`;
    const id = exportStore(p, mcfg, [["lambda_target", String(lambda)]], path.join(outDir, file));
    stores[file] = id.toString("hex");
    log(`exported ${file} id=${stores[file]}`);
  }

  if (tcfg.stepsContinuity > 0) {
    // a ladder entry in all but name: retuning at the base target gauges
    // how much the retune alone moves the measured rate
    p.restore(snapshot);
    const phase = runPhase(p, mcfg, {
      lambda: tcfg.lambdaBase,
      steps: tcfg.stepsContinuity,
      lrStart: tcfg.lrLadder,
      lrEnd: tcfg.lrEnd,
      noiseSeed: tcfg.seed + 100,
      label: "lambda_base",
      sample: makeSampler(tcfg, 10_000),
      log,
    });
    phases.push(phase);
    const id = exportStore(
      p,
      mcfg,
      [["lambda_target", String(tcfg.lambdaBase)]],
      path.join(outDir, "lambda_base.scwt")
    );
    stores["lambda_base.scwt"] = id.toString("hex");
    log(`exported lambda_base.scwt id=${stores["lambda_base.scwt"]}`);
  }

  const summary = {
    seed: tcfg.seed,
    patchSize: tcfg.patchSize,
    lambdaBase: tcfg.lambdaBase,
    ladder: tcfg.ladder,
    dataSource: tcfg.dataSource,
    phases,
    stores,
    totalSeconds: (Date.now() - t0) / 1000,
  };
  fs.writeFileSync(path.join(outDir, "summary.json"), JSON.stringify(summary, null, 2));
  log(`done in ${summary.totalSeconds.toFixed(1)}s, summary in ${path.join(outDir, "summary.json")}`);
}

function main(): void {
  yargs(hideBin(process.argv))
    .command(
      "train",
      "train the base model and the lambda ladder, then export artifacts",
      (y) =>
        y
          .option("config", { type: "string", describe: "key=value config file" })
          .option("out", { type: "string", describe: "artifact directory" })
          .option("seed", { type: "number" })
          .option("steps-stage1", { type: "number" })
          .option("steps-stage2", { type: "number" })
          .option("steps-continuity", { type: "number" })
          .option("patch", { type: "number", describe: "training patch size" })
          .option("ladder", { type: "string", describe: "comma separated lambda targets" })
          .option("lambda-base", { type: "number" })
          .option("data", { type: "string", describe: "synthetic or a directory of .ppm files" }),
      (argv) => {
        try {
          runTrain(argv as TrainCliArgs);
        } catch (err) {
          console.error(err instanceof Error ? err.message : err);
          process.exitCode = 1;
        }
      }
    )
    .demandCommand(1)
    .strict()
    .help()
    .parse();
}

main();
