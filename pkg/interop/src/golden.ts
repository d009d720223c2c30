/**
 * Golden vector files: one JSON object per case, with every float payload
 * base64-encoded as little-endian 64-bit values so nothing is lost to
 * decimal formatting.  A case records the operation it validates, the seed
 * it was generated from, its inputs, the expected outputs, and the
 * tolerances to apply when replaying in 64-bit and 32-bit arithmetic.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { DecoderWeights, FeatureMap } from "./model";

export interface ArrayNode {
  shape: number[];
  data_b64: string;
}

export interface GoldenCase {
  name: string;
  op: string;
  seed: number;
  tolerance_f32: number;
  tolerance_f64: number;
  inputs: Record<string, unknown>;
  expected: Record<string, unknown>;
}

export function b64f64(values: ArrayLike<number>): string {
  const buf = Buffer.alloc(8 * values.length);
  for (let i = 0; i < values.length; i++) buf.writeDoubleLE(values[i], 8 * i);
  return buf.toString("base64");
}

export function arrayNode(shape: number[], values: ArrayLike<number>): ArrayNode {
  const n = shape.reduce((a, b) => a * b, 1);
  if (values.length !== n) {
    throw new Error(`array of ${values.length} values declared as shape [${shape}]`);
  }
  return { shape, data_b64: b64f64(values) };
}

export function weightsNode(weights: DecoderWeights): Record<string, unknown> {
  const stage = (layers: DecoderWeights["coarse"]) =>
    layers.map((l) => ({
      w: arrayNode([l.rows, l.cols], l.w),
      b: arrayNode([l.cols], l.b),
    }));
  return {
    arch: {
      feature_depth: weights.arch.featureDepth,
      hidden: weights.arch.hidden,
      coarse_layers: weights.arch.coarseLayers,
      fine_layers: weights.arch.fineLayers,
      ensemble: weights.arch.ensemble,
    },
    coarse: stage(weights.coarse),
    fine: stage(weights.fine),
  };
}

export function featuresNode(f: FeatureMap): Record<string, unknown> {
  return {
    height: f.height,
    width: f.width,
    depth: f.depth,
    data: arrayNode([f.height, f.width, f.depth], f.data),
  };
}

export function writeCase(dir: string, goldenCase: GoldenCase): string {
  const file = path.join(dir, `${goldenCase.name}.json`);
  fs.writeFileSync(file, JSON.stringify(goldenCase, null, 1) + "\n");
  return file;
}
