/**
 * Emits the golden vector suite: JSON cases plus weight/feature binaries.
 *
 * Every case is generated from the recorded per-case seed, with all float
 * inputs snapped to float32-representable values so that the 32-bit replay
 * sees exactly the same numbers as the 64-bit one.  Expected outputs come
 * from the straight-line oracle.
 *
 * Usage: ts-node src/generate.ts [--out DIR] [--seed N]
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { DecoderArch, DecoderWeights, FeatureMap, ReferenceWeights, Layer,
         coarseShapes, fineShapes, referenceShapes } from "./model";
import { Rng } from "./rand";
import { GoldenCase, arrayNode, featuresNode, weightsNode, writeCase } from "./golden";
import { GridSpec, coarseForward, decodeAt, decodeGrid, ensembleWeightsAt,
         fineForward, matmulAddBias } from "./oracle";
import { encodeFeatureMap, encodeReferenceWeights } from "./formats";
import { Checkpoint, exportWeights, writeCheckpoint } from "./checkpoint";

const TOLERANCE_F32 = 1e-5;
const TOLERANCE_F64 = 1e-10;

function makeLayer(rng: Rng, rows: number, cols: number): Layer {
  // fan-in uniform bound keeps activations and replay error O(1)
  const limit = Math.sqrt(6 / rows);
  return {
    rows,
    cols,
    w: rng.f32Array(rows * cols, -limit, limit),
    b: rng.f32Array(cols, -0.1, 0.1),
  };
}

function zeroLayer(rows: number, cols: number): Layer {
  return { rows, cols, w: new Float64Array(rows * cols), b: new Float64Array(cols) };
}

function makeWeights(rng: Rng, arch: DecoderArch): DecoderWeights {
  return {
    arch,
    coarse: coarseShapes(arch).map(([r, c]) => makeLayer(rng, r, c)),
    fine: fineShapes(arch).map(([r, c]) => makeLayer(rng, r, c)),
  };
}

function zeroWeights(arch: DecoderArch): DecoderWeights {
  return {
    arch,
    coarse: coarseShapes(arch).map(([r, c]) => zeroLayer(r, c)),
    fine: fineShapes(arch).map(([r, c]) => zeroLayer(r, c)),
  };
}

function makeFeatures(rng: Rng, height: number, width: number, depth: number): FeatureMap {
  return { height, width, depth, data: rng.f32Array(height * width * depth, 0, 1) };
}

function arch(
  featureDepth: number,
  hidden: number,
  coarseLayers = 2,
  fineLayers = 2,
  ensemble = true,
): DecoderArch {
  return { featureDepth, hidden, coarseLayers, fineLayers, ensemble };
}

interface CaseSpec {
  name: string;
  build: (rng: Rng, seed: number) => GoldenCase;
}

function baseCase(
  name: string,
  op: string,
  seed: number,
  inputs: Record<string, unknown>,
  expected: Record<string, unknown>,
): GoldenCase {
  return {
    name,
    op,
    seed,
    tolerance_f32: TOLERANCE_F32,
    tolerance_f64: TOLERANCE_F64,
    inputs,
    expected,
  };
}

function matmulCase(name: string, seed: number, rng: Rng, m: number, k: number, n: number): GoldenCase {
  const x = rng.f32Array(m * k, -1, 1);
  const layer = makeLayer(rng, k, n);
  const y = matmulAddBias(x, m, k, layer);
  return baseCase(name, "matmul", seed, {
    x: arrayNode([m, k], x),
    w: arrayNode([k, n], layer.w),
    b: arrayNode([n], layer.b),
  }, { y: arrayNode([m, n], y) });
}

function ensembleCase(name: string, seed: number, p: number, q: number): GoldenCase {
  return baseCase(name, "ensemble_weights", seed, { p, q }, {
    weights: arrayNode([4], ensembleWeightsAt(p, q)),
  });
}

function coarseCase(
  name: string,
  seed: number,
  weights: DecoderWeights,
  code: Float64Array,
  firstRel: [number, number],
  lastRel: [number, number],
): GoldenCase {
  const hidden = coarseForward(weights, code, firstRel, lastRel);
  return baseCase(name, "coarse_forward", seed, {
    weights: weightsNode(weights),
    code: arrayNode([code.length], code),
    x_first_rel: arrayNode([2], firstRel),
    x_last_rel: arrayNode([2], lastRel),
  }, { hidden: arrayNode([hidden.length], hidden) });
}

function fineCase(
  name: string,
  seed: number,
  weights: DecoderWeights,
  hidden: Float64Array,
  rel: [number, number],
): GoldenCase {
  const rgb = fineForward(weights, hidden, rel);
  return baseCase(name, "fine_forward", seed, {
    weights: weightsNode(weights),
    hidden: arrayNode([hidden.length], hidden),
    x_rel: arrayNode([2], rel),
  }, { rgb: arrayNode([3], rgb) });
}

function decodeAtCase(
  name: string,
  seed: number,
  weights: DecoderWeights,
  features: FeatureMap,
  coords: Array<[number, number]>,
): GoldenCase {
  const rgb = decodeAt(features, coords, weights);
  return baseCase(name, "decode_at", seed, {
    weights: weightsNode(weights),
    features: featuresNode(features),
    coords: arrayNode([coords.length, 2], coords.flat()),
  }, { rgb: arrayNode([coords.length, 3], rgb) });
}

function gridCase(
  name: string,
  seed: number,
  weights: DecoderWeights,
  features: FeatureMap,
  spec: GridSpec,
): GoldenCase {
  const image = decodeGrid(features, spec, weights);
  return baseCase(name, "decode_grid", seed, {
    weights: weightsNode(weights),
    features: featuresNode(features),
    out_height: spec.outHeight,
    out_width: spec.outWidth,
    strategy: spec.strategy,
    n: spec.n,
    scale: spec.scale,
  }, { image: arrayNode([spec.outHeight, spec.outWidth, 3], image) });
}

/** Pack decoder weights as a framework-convention checkpoint, then export. */
function viaCheckpoint(weights: DecoderWeights): Buffer {
  const tensors: Checkpoint = new Map();
  const put = (stage: string, layers: Layer[]) => {
    layers.forEach((l, i) => {
      const wT = new Float64Array(l.cols * l.rows);
      for (let r = 0; r < l.rows; r++) {
        for (let c = 0; c < l.cols; c++) wT[c * l.rows + r] = l.w[r * l.cols + c];
      }
      tensors.set(`${stage}.${i}.weight`, { dtype: "F32", shape: [l.cols, l.rows], data: wT });
      tensors.set(`${stage}.${i}.bias`, { dtype: "F32", shape: [l.cols], data: l.b.slice() });
    });
  };
  put("coarse", weights.coarse);
  put("fine", weights.fine);
  return exportWeights(writeCheckpoint(tensors), weights.arch);
}

function makeReference(rng: Rng, featureDepth: number, hidden: number, hiddenLayers: number): ReferenceWeights {
  return {
    featureDepth,
    hidden,
    layers: referenceShapes(featureDepth, hidden, hiddenLayers).map(([r, c]) => makeLayer(rng, r, c)),
  };
}

function main(): void {
  const args = process.argv.slice(2);
  let outDir = path.join(__dirname, "..", "..", "tests", "golden");
  let masterSeed = 20260823;
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--out") outDir = args[++i];
    else if (args[i] === "--seed") masterSeed = Number(args[++i]);
    else throw new Error(`unknown argument ${args[i]}`);
  }
  fs.mkdirSync(outDir, { recursive: true });

  const specs: CaseSpec[] = [
    {
      name: "c01_matmul_3x4_4x2",
      build: (rng, seed) => matmulCase("c01_matmul_3x4_4x2", seed, rng, 3, 4, 2),
    },
    {
      name: "c02_matmul_1x1",
      build: (rng, seed) => matmulCase("c02_matmul_1x1", seed, rng, 1, 1, 1),
    },
    {
      name: "c03_ensemble_center",
      build: (_rng, seed) => ensembleCase("c03_ensemble_center", seed, 0, 0),
    },
    {
      name: "c04_ensemble_corner",
      build: (_rng, seed) => ensembleCase("c04_ensemble_corner", seed, 1, -1),
    },
    {
      name: "c05_ensemble_random",
      build: (rng, seed) =>
        ensembleCase("c05_ensemble_random", seed, rng.uniform(-1, 1), rng.uniform(-1, 1)),
    },
    {
      name: "c06_coarse_zero_weights",
      build: (rng, seed) => {
        const w = zeroWeights(arch(3, 8));
        return coarseCase("c06_coarse_zero_weights", seed, w, rng.f32Array(48, 0, 1),
          [rng.uniform(-2, 2), rng.uniform(-2, 2)], [rng.uniform(-2, 2), rng.uniform(-2, 2)]);
      },
    },
    {
      name: "c07_coarse_random",
      build: (rng, seed) => {
        const w = makeWeights(rng, arch(6, 16));
        return coarseCase("c07_coarse_random", seed, w, rng.f32Array(96, 0, 1),
          [Math.fround(rng.uniform(-2, 0)), Math.fround(rng.uniform(-2, 0))],
          [Math.fround(rng.uniform(0, 2)), Math.fround(rng.uniform(0, 2))]);
      },
    },
    {
      name: "c08_coarse_center_mode",
      build: (rng, seed) => {
        const w = makeWeights(rng, arch(6, 16, 2, 2, false));
        return coarseCase("c08_coarse_center_mode", seed, w, rng.f32Array(54, 0, 1),
          [Math.fround(rng.uniform(-1, 1)), Math.fround(rng.uniform(-1, 1))],
          [Math.fround(rng.uniform(-1, 1)), Math.fround(rng.uniform(-1, 1))]);
      },
    },
    {
      name: "c09_fine_bias_only",
      build: (rng, seed) => {
        const w = zeroWeights(arch(3, 8, 2, 1));
        w.fine[w.fine.length - 1].b = new Float64Array(
          [0.11, -0.22, 0.33].map(Math.fround));
        return fineCase("c09_fine_bias_only", seed, w, rng.f32Array(8, -1, 1),
          [rng.uniform(-1, 1), rng.uniform(-1, 1)]);
      },
    },
    {
      name: "c10_fine_random",
      build: (rng, seed) => {
        const w = makeWeights(rng, arch(6, 16));
        return fineCase("c10_fine_random", seed, w, rng.f32Array(16, -1, 1),
          [Math.fround(rng.uniform(-1, 1)), Math.fround(rng.uniform(-1, 1))]);
      },
    },
    {
      name: "c11_decode_at_mixed_queries",
      build: (rng, seed) => {
        const w = makeWeights(rng, arch(6, 16));
        const f = makeFeatures(rng, 4, 4, 6);
        // midpoint tie, corners, an exact latent center, and free points
        const coords: Array<[number, number]> = [
          [0, 0], [-1, -1], [1, 1], [0.25, -0.25], [-0.3, 0.7],
          [rng.uniform(-1, 1), rng.uniform(-1, 1)],
          [rng.uniform(-1, 1), rng.uniform(-1, 1)],
        ];
        return decodeAtCase("c11_decode_at_mixed_queries", seed, w, f, coords);
      },
    },
    {
      name: "c12_decode_at_center_mode",
      build: (rng, seed) => {
        const w = makeWeights(rng, arch(6, 16, 2, 2, false));
        const f = makeFeatures(rng, 3, 3, 6);
        const coords: Array<[number, number]> = [
          [0, 0], [2 / 3 - 1, 1 / 3], [1, -1],
          [rng.uniform(-1, 1), rng.uniform(-1, 1)],
          [rng.uniform(-1, 1), rng.uniform(-1, 1)],
        ];
        return decodeAtCase("c12_decode_at_center_mode", seed, w, f, coords);
      },
    },
    {
      name: "c13_decode_at_single_latent",
      build: (rng, seed) => {
        const w = makeWeights(rng, arch(3, 8));
        const f = makeFeatures(rng, 1, 1, 3);
        const coords: Array<[number, number]> = [[0, 0], [0.3, -0.7], [1, 1], [-1, -1]];
        return decodeAtCase("c13_decode_at_single_latent", seed, w, f, coords);
      },
    },
    {
      name: "c14_grid_s4_linear",
      build: (rng, seed) => gridCase("c14_grid_s4_linear", seed,
        makeWeights(rng, arch(6, 16)), makeFeatures(rng, 2, 2, 6),
        { outHeight: 8, outWidth: 8, strategy: "linear", n: 1, scale: 4 }),
    },
    {
      name: "c15_grid_s2_5_linear",
      build: (rng, seed) => gridCase("c15_grid_s2_5_linear", seed,
        makeWeights(rng, arch(6, 16)), makeFeatures(rng, 4, 3, 6),
        { outHeight: 10, outWidth: 7, strategy: "linear", n: 1, scale: 2.5 }),
    },
    {
      name: "c16_grid_constant_n2",
      build: (rng, seed) => gridCase("c16_grid_constant_n2", seed,
        makeWeights(rng, arch(6, 8, 3, 1)), makeFeatures(rng, 3, 3, 6),
        { outHeight: 9, outWidth: 9, strategy: "constant", n: 2, scale: 3 }),
    },
    {
      name: "c17_grid_fixed_whole_group",
      build: (rng, seed) => gridCase("c17_grid_fixed_whole_group", seed,
        makeWeights(rng, arch(6, 16)), makeFeatures(rng, 2, 3, 6),
        { outHeight: 9, outWidth: 12, strategy: "fixed", n: 64, scale: 4 }),
    },
    {
      name: "c18_grid_exact_ties",
      build: (rng, seed) => gridCase("c18_grid_exact_ties", seed,
        makeWeights(rng, arch(6, 16)), makeFeatures(rng, 2, 2, 6),
        { outHeight: 3, outWidth: 3, strategy: "linear", n: 1, scale: 1.5 }),
    },
    {
      name: "c19_grid_center_mode",
      build: (rng, seed) => gridCase("c19_grid_center_mode", seed,
        makeWeights(rng, arch(6, 16, 2, 2, false)), makeFeatures(rng, 3, 3, 6),
        { outHeight: 7, outWidth: 7, strategy: "linear", n: 1, scale: 7 / 3 }),
    },
    {
      name: "c20_grid_scale_one",
      build: (rng, seed) => gridCase("c20_grid_scale_one", seed,
        makeWeights(rng, arch(6, 8)), makeFeatures(rng, 5, 4, 6),
        { outHeight: 5, outWidth: 4, strategy: "linear", n: 1, scale: 1 }),
    },
    {
      name: "c21_grid_deep_code",
      build: (rng, seed) => gridCase("c21_grid_deep_code", seed,
        makeWeights(rng, arch(27, 16, 3, 2)), makeFeatures(rng, 3, 3, 27),
        { outHeight: 6, outWidth: 6, strategy: "constant", n: 1, scale: 2 }),
    },
  ];

  const written: string[] = [];
  specs.forEach((spec, index) => {
    const seed = masterSeed + 97 * index;
    const goldenCase = spec.build(new Rng(seed), seed);
    if (goldenCase.name !== spec.name) {
      throw new Error(`case name mismatch: ${goldenCase.name} vs ${spec.name}`);
    }
    written.push(writeCase(outDir, goldenCase));
  });

  // file-backed cases: binaries written through the exporter, decode recorded
  // from the same float32-snapped values the files carry
  const fileSeed = masterSeed + 97 * specs.length;
  const fileRng = new Rng(fileSeed);

  const ensWeights = makeWeights(fileRng, arch(6, 16));
  const ensFeatures = makeFeatures(fileRng, 4, 4, 6);
  fs.writeFileSync(path.join(outDir, "interop_weights_ens.bin"), viaCheckpoint(ensWeights));
  fs.writeFileSync(path.join(outDir, "interop_features_4x4x6.difm"), encodeFeatureMap(ensFeatures));
  const ensSpec: GridSpec = { outHeight: 9, outWidth: 9, strategy: "linear", n: 1, scale: 2.25 };
  written.push(writeCase(outDir, baseCase(
    "c22_file_decode_ens", "file_decode", fileSeed,
    {
      weights_file: "interop_weights_ens.bin",
      features_file: "interop_features_4x4x6.difm",
      out_height: ensSpec.outHeight,
      out_width: ensSpec.outWidth,
      strategy: ensSpec.strategy,
      n: ensSpec.n,
      scale: ensSpec.scale,
    },
    { image: arrayNode([9, 9, 3], decodeGrid(ensFeatures, ensSpec, ensWeights)) },
  )));

  const centerWeights = makeWeights(fileRng, arch(6, 16, 2, 2, false));
  const centerFeatures = makeFeatures(fileRng, 5, 3, 6);
  fs.writeFileSync(path.join(outDir, "interop_weights_center.bin"), viaCheckpoint(centerWeights));
  fs.writeFileSync(path.join(outDir, "interop_features_5x3x6.difm"), encodeFeatureMap(centerFeatures));
  const centerSpec: GridSpec = { outHeight: 10, outWidth: 6, strategy: "fixed", n: 3, scale: 2 };
  written.push(writeCase(outDir, baseCase(
    "c23_file_decode_center_mode", "file_decode", fileSeed,
    {
      weights_file: "interop_weights_center.bin",
      features_file: "interop_features_5x3x6.difm",
      out_height: centerSpec.outHeight,
      out_width: centerSpec.outWidth,
      strategy: centerSpec.strategy,
      n: centerSpec.n,
      scale: centerSpec.scale,
    },
    { image: arrayNode([10, 6, 3], decodeGrid(centerFeatures, centerSpec, centerWeights)) },
  )));

  // a reference-decoder file so the byte-level rewrite loop covers both magics
  fs.writeFileSync(
    path.join(outDir, "interop_reference_6x16.bin"),
    encodeReferenceWeights(makeReference(fileRng, 6, 16, 2)),
  );

  console.log(`wrote ${written.length} golden cases and 5 binary files to ${outDir}`);
}

main();
