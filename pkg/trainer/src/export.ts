/**
 * Turn live training variables into a weight store the codec loads.
 *
 * Conv variables train as [kh, kw, in, out] and the store wants
 * [out, in, kh, kw], so weights are transposed on the way out. The
 * export checks both directions against the parameter inventory: a
 * missing tensor or an unexpected extra is an error, named, before
 * anything touches disk.
 */

import * as tf from "@tensorflow/tfjs";
import { ModelConfig, modelConfigText } from "./config";
import { Params } from "./nets";
import { schema } from "./schema";
import { ParamMap, writeStore } from "./scwt";

export function collectParams(p: Params, cfg: ModelConfig): ParamMap {
  const layout = schema(cfg);
  const out: ParamMap = new Map();
  const missing: string[] = [];
  for (const [name, storeShape] of layout) {
    const v = p.vars.get(name);
    if (v === undefined) {
      missing.push(name);
      continue;
    }
    let data: Float32Array;
    if (name.endsWith(".weight")) {
      const moved = tf.transpose(v, [3, 2, 0, 1]);
      data = new Float32Array(moved.dataSync() as Float32Array);
      moved.dispose();
    } else {
      data = new Float32Array(v.dataSync() as Float32Array);
    }
    const size = storeShape.reduce((a, b) => a * b, 1);
    if (data.length !== size) {
      throw new Error(`${name}: trained shape does not match the layout ${JSON.stringify(storeShape)}`);
    }
    out.set(name, { shape: [...storeShape], data });
  }
  if (missing.length > 0) {
    throw new Error(`cannot export, ${missing.length} tensors missing: ${missing.join(", ")}`);
  }
  const extras = [...p.vars.keys()].filter((n) => !layout.has(n)).sort();
  if (extras.length > 0) {
    throw new Error(`cannot export, tensors outside the layout: ${extras.join(", ")}`);
  }
  return out;
}

/**
 * Write the store with the model's full config plus any extra keys
 * (readers ignore keys they do not know). Returns the store id.
 */
export function exportStore(
  p: Params,
  cfg: ModelConfig,
  extras: ReadonlyArray<readonly [string, string]>,
  filePath: string
): Buffer {
  const params = collectParams(p, cfg);
  let configText = modelConfigText(cfg);
  for (const [key, value] of extras) {
    configText += `${key}=${value}\n`;
  }
  return writeStore(filePath, params, configText);
}
