/**
 * Straight-line 64-bit evaluation of the sliced coarse-to-fine decoder.
 *
 * Everything here is scalar loops over plain arrays, deliberately unshared
 * with any production implementation: agreement between the two is the
 * evidence the golden vectors exist to provide.
 *
 * Conventions implemented:
 *
 * - Pixel i of an N-pixel axis sits at (2i+1)/N - 1 in [-1, 1]; latent codes
 *   use the same rule on the input raster.
 * - Each output coordinate belongs to its nearest latent code; exact
 *   midpoint ties go to the smaller (top-left) latent index, decided with
 *   integer arithmetic.
 * - A group member's local offset from its latent is (coord - latent) scaled
 *   by the latent grid size per axis, so the latent cell spans [-1, 1]^2.
 * - Group members are row-major; a group of g members is cut into
 *   ceil(g/u) contiguous slices of at most u members.
 * - Vertex codes are clamped 4x4 windows anchored at the half-integer cell
 *   corners, row-major, channels innermost; without the ensemble the group's
 *   own 3x3 window is used instead.
 * - The coarse stage reads [vertex code, first - tag, last - tag] where
 *   first/last are the slice's boundary member offsets and tag is the vertex
 *   corner in {-1, 1}^2 ((0, 0) without the ensemble); all layers ReLU.
 * - The blend weight of vertex (ty, tx) at local (p, q) is
 *   0.25 * (1 + ty*p) * (1 + tx*q); weights sum to one.
 * - The fine stage reads [blended hidden, p * py, q * px] with the parity
 *   flips py = 1 - 2*(j%2), px = 1 - 2*(k%2) of the group's latent index,
 *   which makes the input agree from both sides of every cell boundary.
 */

import { DecoderWeights, FeatureMap, Layer, codeWidth } from "./model";

/** Corner order: top-left, top-right, bottom-left, bottom-right. */
export const VERTEX_TAGS: ReadonlyArray<readonly [number, number]> = [
  [-1, -1],
  [-1, 1],
  [1, -1],
  [1, 1],
];

export function gridCoords(n: number): Float64Array {
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = (2.0 * i + 1.0) / n - 1.0;
  return out;
}

/**
 * Nearest-latent index for each output position along one axis.
 *
 * Position (2i+1)/outN and midpoint (2j+2)/latN compare as
 * (2i+1)*latN vs (2j+2)*outN in exact integers; the smallest j whose upper
 * midpoint reaches the position wins, which sends exact ties down.
 */
export function axisAssignment(outN: number, latN: number): Int32Array {
  if (latN > outN) throw new Error(`latent axis ${latN} exceeds output axis ${outN}`);
  const out = new Int32Array(outN);
  for (let i = 0; i < outN; i++) {
    let j = 0;
    while (j < latN - 1 && (2 * j + 2) * outN < (2 * i + 1) * latN) j++;
    out[i] = j;
  }
  return out;
}

export function roundHalfUp(x: number): number {
  return Math.floor(x + 0.5);
}

export function sliceInterval(strategy: string, s: number, n: number, g: number): number {
  if (s < 1) throw new Error(`scale must be >= 1; got ${s}`);
  if (!Number.isInteger(n) || n < 1) throw new Error(`strategy parameter must be a positive integer; got ${n}`);
  let u: number;
  if (strategy === "linear") u = roundHalfUp(n * s);
  else if (strategy === "constant") u = Math.ceil(s * s / n);
  else if (strategy === "fixed") u = n;
  else throw new Error(`unknown slicing strategy ${strategy}`);
  return Math.max(1, Math.min(u, g));
}

function clampIndex(i: number, hi: number): number {
  return i < 0 ? 0 : i > hi ? hi : i;
}

function cell(f: FeatureMap, r: number, c: number): number {
  return (r * f.width + c) * f.depth;
}

/** Clamped 4x4 window code for a cell corner at half-integer latent position. */
export function vertexCode(f: FeatureMap, vy: number, vx: number): Float64Array {
  const ay = Math.round(vy + 0.5);
  const ax = Math.round(vx + 0.5);
  if (Math.abs(vy + 0.5 - ay) > 1e-9 || Math.abs(vx + 0.5 - ax) > 1e-9) {
    throw new Error(`vertex position (${vy}, ${vx}) is not half-integer`);
  }
  const out = new Float64Array(16 * f.depth);
  let o = 0;
  for (let dy = -2; dy <= 1; dy++) {
    const r = clampIndex(ay + dy, f.height - 1);
    for (let dx = -2; dx <= 1; dx++) {
      const c = clampIndex(ax + dx, f.width - 1);
      const base = cell(f, r, c);
      for (let d = 0; d < f.depth; d++) out[o++] = f.data[base + d];
    }
  }
  return out;
}

/** Clamped 3x3 window code centered on latent (j, k); the ensemble-free input. */
export function centerCode(f: FeatureMap, j: number, k: number): Float64Array {
  const out = new Float64Array(9 * f.depth);
  let o = 0;
  for (let dy = -1; dy <= 1; dy++) {
    const r = clampIndex(j + dy, f.height - 1);
    for (let dx = -1; dx <= 1; dx++) {
      const c = clampIndex(k + dx, f.width - 1);
      const base = cell(f, r, c);
      for (let d = 0; d < f.depth; d++) out[o++] = f.data[base + d];
    }
  }
  return out;
}

function affine(x: Float64Array, layer: Layer): Float64Array {
  if (x.length !== layer.rows) {
    throw new Error(`input width ${x.length} does not match layer rows ${layer.rows}`);
  }
  const out = new Float64Array(layer.cols);
  for (let c = 0; c < layer.cols; c++) {
    let acc = 0;
    for (let r = 0; r < layer.rows; r++) acc += x[r] * layer.w[r * layer.cols + c];
    out[c] = acc + layer.b[c];
  }
  return out;
}

function reluInPlace(x: Float64Array): Float64Array {
  for (let i = 0; i < x.length; i++) if (x[i] < 0) x[i] = 0;
  return x;
}

export function matmulAddBias(
  x: Float64Array, xRows: number, xCols: number, layer: Layer,
): Float64Array {
  const out = new Float64Array(xRows * layer.cols);
  const row = new Float64Array(xCols);
  for (let r = 0; r < xRows; r++) {
    for (let i = 0; i < xCols; i++) row[i] = x[r * xCols + i];
    out.set(affine(row, layer), r * layer.cols);
  }
  return out;
}

/** Slice hidden vector seen from one vertex; every coarse layer is ReLU. */
export function coarseForward(
  weights: DecoderWeights,
  code: Float64Array,
  firstRel: readonly [number, number],
  lastRel: readonly [number, number],
): Float64Array {
  const width = codeWidth(weights.arch);
  if (code.length !== width) {
    throw new Error(`code width ${code.length}, expected ${width}`);
  }
  let a: Float64Array = new Float64Array(width + 4);
  a.set(code);
  a[width] = firstRel[0];
  a[width + 1] = firstRel[1];
  a[width + 2] = lastRel[0];
  a[width + 3] = lastRel[1];
  for (const layer of weights.coarse) a = reluInPlace(affine(a, layer));
  return a;
}

/** RGB from a blended hidden vector and a member coordinate; linear output layer. */
export function fineForward(
  weights: DecoderWeights,
  hidden: Float64Array,
  rel: readonly [number, number],
): Float64Array {
  if (hidden.length !== weights.arch.hidden) {
    throw new Error(`hidden width ${hidden.length}, expected ${weights.arch.hidden}`);
  }
  let a: Float64Array = new Float64Array(weights.arch.hidden + 2);
  a.set(hidden);
  a[weights.arch.hidden] = rel[0];
  a[weights.arch.hidden + 1] = rel[1];
  for (let i = 0; i < weights.fine.length; i++) {
    a = affine(a, weights.fine[i]);
    if (i < weights.fine.length - 1) reluInPlace(a);
  }
  return a;
}

/** The four vertex blend weights at local (p, q); nonnegative, sum to one. */
export function ensembleWeightsAt(p: number, q: number): Float64Array {
  const out = new Float64Array(4);
  for (let t = 0; t < 4; t++) {
    const [ty, tx] = VERTEX_TAGS[t];
    out[t] = 0.25 * (1.0 + ty * p) * (1.0 + tx * q);
  }
  return out;
}

function blend(hiddens: Float64Array[], weights: Float64Array): Float64Array {
  const out = new Float64Array(hiddens[0].length);
  for (let c = 0; c < out.length; c++) {
    let acc = 0;
    for (let t = 0; t < hiddens.length; t++) acc += weights[t] * hiddens[t][c];
    out[c] = acc;
  }
  return out;
}

export interface GridSpec {
  outHeight: number;
  outWidth: number;
  strategy: string;
  n: number;
  scale: number;
}

/** Positions along one axis owned by each latent index, in order. */
function axisRuns(assign: Int32Array, latN: number): number[][] {
  const runs: number[][] = [];
  for (let j = 0; j < latN; j++) runs.push([]);
  for (let i = 0; i < assign.length; i++) runs[assign[i]].push(i);
  return runs;
}

/** Decode a full output grid; returns outHeight*outWidth*3 row-major rgb. */
export function decodeGrid(f: FeatureMap, spec: GridSpec, weights: DecoderWeights): Float64Array {
  const arch = weights.arch;
  if (f.depth !== arch.featureDepth) {
    throw new Error(`feature depth ${f.depth} != decoder depth ${arch.featureDepth}`);
  }
  const outYs = gridCoords(spec.outHeight);
  const outXs = gridCoords(spec.outWidth);
  const latYs = gridCoords(f.height);
  const latXs = gridCoords(f.width);
  const rowRuns = axisRuns(axisAssignment(spec.outHeight, f.height), f.height);
  const colRuns = axisRuns(axisAssignment(spec.outWidth, f.width), f.width);
  const tags = arch.ensemble ? VERTEX_TAGS : [[0, 0] as const];
  const out = new Float64Array(spec.outHeight * spec.outWidth * 3);

  for (let j = 0; j < f.height; j++) {
    for (let k = 0; k < f.width; k++) {
      const rows = rowRuns[j];
      const cols = colRuns[k];
      const g = rows.length * cols.length;
      const u = sliceInterval(spec.strategy, spec.scale, spec.n, g);
      const codes = arch.ensemble
        ? tags.map((t) => vertexCode(f, j + t[0] / 2, k + t[1] / 2))
        : [centerCode(f, j, k)];
      const py = 1 - 2 * (j % 2);
      const px = 1 - 2 * (k % 2);

      // row-major member offsets from the latent, in local units
      const p = new Float64Array(g);
      const q = new Float64Array(g);
      for (let m = 0; m < g; m++) {
        p[m] = (outYs[rows[Math.floor(m / cols.length)]] - latYs[j]) * f.height;
        q[m] = (outXs[cols[m % cols.length]] - latXs[k]) * f.width;
      }

      for (let start = 0; start < g; start += u) {
        const stop = Math.min(start + u, g);
        const hiddens = tags.map((t, ti) =>
          coarseForward(
            weights,
            codes[ti],
            [p[start] - t[0], q[start] - t[1]],
            [p[stop - 1] - t[0], q[stop - 1] - t[1]],
          ),
        );
        for (let m = start; m < stop; m++) {
          const h = arch.ensemble ? blend(hiddens, ensembleWeightsAt(p[m], q[m])) : hiddens[0];
          const rgb = fineForward(weights, h, [p[m] * py, q[m] * px]);
          const r = rows[Math.floor(m / cols.length)];
          const c = cols[m % cols.length];
          out.set(rgb, (r * spec.outWidth + c) * 3);
        }
      }
    }
  }
  return out;
}

/**
 * Decode arbitrary (y, x) coordinates in [-1, 1]^2; returns n*3 rgb values.
 *
 * Each query is a degenerate one-member slice (first = last = query) in the
 * group of its nearest latent, with midpoint ties going to the smaller index.
 */
export function decodeAt(
  f: FeatureMap,
  coords: ReadonlyArray<readonly [number, number]>,
  weights: DecoderWeights,
): Float64Array {
  const arch = weights.arch;
  const latYs = gridCoords(f.height);
  const latXs = gridCoords(f.width);
  const tags = arch.ensemble ? VERTEX_TAGS : [[0, 0] as const];
  const out = new Float64Array(coords.length * 3);

  for (let i = 0; i < coords.length; i++) {
    const [y, x] = coords[i];
    const ciy = (y + 1.0) * f.height / 2.0 - 0.5;
    const cix = (x + 1.0) * f.width / 2.0 - 0.5;
    const j = clampIndex(Math.ceil(ciy - 0.5), f.height - 1);
    const k = clampIndex(Math.ceil(cix - 0.5), f.width - 1);
    const p = (y - latYs[j]) * f.height;
    const q = (x - latXs[k]) * f.width;

    const hiddens = tags.map((t) => {
      const code = arch.ensemble
        ? vertexCode(f, j + t[0] / 2, k + t[1] / 2)
        : centerCode(f, j, k);
      return coarseForward(weights, code, [p - t[0], q - t[1]], [p - t[0], q - t[1]]);
    });
    const h = arch.ensemble ? blend(hiddens, ensembleWeightsAt(p, q)) : hiddens[0];
    const py = 1 - 2 * (j % 2);
    const px = 1 - 2 * (k % 2);
    const rgb = fineForward(weights, h, [p * py, q * px]);
    out.set(rgb, i * 3);
  }
  return out;
}
