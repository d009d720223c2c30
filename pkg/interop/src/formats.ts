/**
 * Little-endian binary formats shared with the decoder runtime.
 *
 * Weight files: magic ("DIIF" for coarse-to-fine, "LIIR" for the single-stage
 * reference decoder), version u32, feature depth u32, hidden u32, first-stage
 * layer count u32, second-stage layer count u32 (zero for "LIIR"); then per
 * layer rows u32, cols u32, rows*cols float32 row-major weights, cols float32
 * biases.  The coarse-to-fine mode (with or without the vertex ensemble) is
 * carried by the first coarse layer's width, not a flag.
 *
 * Feature maps: magic "DIFM", version u32, height u32, width u32, depth u32,
 * then height*width*depth float32 row-major, channels innermost.
 */

import {
  DecoderWeights,
  FeatureMap,
  Layer,
  ReferenceWeights,
  checkStage,
  coarseShapes,
  fineShapes,
  referenceShapes,
} from "./model";

export const WEIGHTS_MAGIC = "DIIF";
export const REFERENCE_MAGIC = "LIIR";
export const FEATURE_MAGIC = "DIFM";
export const FORMAT_VERSION = 1;

class ByteWriter {
  private parts: Buffer[] = [];

  magic(text: string): void {
    this.parts.push(Buffer.from(text, "ascii"));
  }

  u32(value: number): void {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(value >>> 0, 0);
    this.parts.push(b);
  }

  f32s(values: Float64Array): void {
    const b = Buffer.alloc(4 * values.length);
    for (let i = 0; i < values.length; i++) b.writeFloatLE(values[i], 4 * i);
    this.parts.push(b);
  }

  done(): Buffer {
    return Buffer.concat(this.parts);
  }
}

class ByteReader {
  private off = 0;

  constructor(private buf: Buffer) {}

  take(n: number): Buffer {
    if (this.off + n > this.buf.length) {
      throw new Error(`truncated file: wanted ${n} bytes at byte ${this.off}`);
    }
    const chunk = this.buf.subarray(this.off, this.off + n);
    this.off += n;
    return chunk;
  }

  magic(): string {
    return this.take(4).toString("ascii");
  }

  u32(): number {
    return this.take(4).readUInt32LE(0);
  }

  f32s(n: number): Float64Array {
    const chunk = this.take(4 * n);
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) out[i] = chunk.readFloatLE(4 * i);
    return out;
  }

  get offset(): number {
    return this.off;
  }

  get remaining(): number {
    return this.buf.length - this.off;
  }
}

function writeStage(w: ByteWriter, layers: Layer[]): void {
  for (const layer of layers) {
    w.u32(layer.rows);
    w.u32(layer.cols);
    w.f32s(layer.w);
    w.f32s(layer.b);
  }
}

function readStage(r: ByteReader, count: number): Layer[] {
  const layers: Layer[] = [];
  for (let i = 0; i < count; i++) {
    const rows = r.u32();
    const cols = r.u32();
    layers.push({ rows, cols, w: r.f32s(rows * cols), b: r.f32s(cols) });
  }
  return layers;
}

export function encodeDecoderWeights(weights: DecoderWeights): Buffer {
  checkStage("coarse", weights.coarse, coarseShapes(weights.arch));
  checkStage("fine", weights.fine, fineShapes(weights.arch));
  const w = new ByteWriter();
  w.magic(WEIGHTS_MAGIC);
  w.u32(FORMAT_VERSION);
  w.u32(weights.arch.featureDepth);
  w.u32(weights.arch.hidden);
  w.u32(weights.coarse.length);
  w.u32(weights.fine.length);
  writeStage(w, weights.coarse);
  writeStage(w, weights.fine);
  return w.done();
}

export function encodeReferenceWeights(weights: ReferenceWeights): Buffer {
  checkStage(
    "reference",
    weights.layers,
    referenceShapes(weights.featureDepth, weights.hidden, weights.layers.length - 1),
  );
  const w = new ByteWriter();
  w.magic(REFERENCE_MAGIC);
  w.u32(FORMAT_VERSION);
  w.u32(weights.featureDepth);
  w.u32(weights.hidden);
  w.u32(weights.layers.length);
  w.u32(0);
  writeStage(w, weights.layers);
  return w.done();
}

export function decodeWeightsFile(buf: Buffer): DecoderWeights | ReferenceWeights {
  const r = new ByteReader(buf);
  const magic = r.magic();
  if (magic !== WEIGHTS_MAGIC && magic !== REFERENCE_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(magic)} at byte 0`);
  }
  const version = r.u32();
  if (version !== FORMAT_VERSION) {
    throw new Error(`unsupported version ${version} at byte 4`);
  }
  const featureDepth = r.u32();
  const hidden = r.u32();
  const nFirst = r.u32();
  const nSecond = r.u32();
  if (magic === REFERENCE_MAGIC) {
    if (nSecond !== 0) {
      throw new Error(`reference weights carry a second stage at byte ${r.offset}`);
    }
    const layers = readStage(r, nFirst);
    if (r.remaining !== 0) throw new Error(`trailing bytes at byte ${r.offset}`);
    return { featureDepth, hidden, layers };
  }
  const coarse = readStage(r, nFirst);
  const fine = readStage(r, nSecond);
  if (r.remaining !== 0) throw new Error(`trailing bytes at byte ${r.offset}`);
  const firstWidth = coarse[0].rows;
  let ensemble: boolean;
  if (firstWidth === 16 * featureDepth + 4) ensemble = true;
  else if (firstWidth === 9 * featureDepth + 4) ensemble = false;
  else {
    throw new Error(`coarse input width ${firstWidth} fits no known mode for depth ${featureDepth}`);
  }
  return {
    arch: {
      featureDepth,
      hidden,
      coarseLayers: nFirst,
      fineLayers: nSecond - 1,
      ensemble,
    },
    coarse,
    fine,
  };
}

export function isReference(
  weights: DecoderWeights | ReferenceWeights,
): weights is ReferenceWeights {
  return (weights as ReferenceWeights).layers !== undefined;
}

export function encodeFeatureMap(f: FeatureMap): Buffer {
  if (f.data.length !== f.height * f.width * f.depth) {
    throw new Error(`feature data length ${f.data.length} != ${f.height}x${f.width}x${f.depth}`);
  }
  const w = new ByteWriter();
  w.magic(FEATURE_MAGIC);
  w.u32(FORMAT_VERSION);
  w.u32(f.height);
  w.u32(f.width);
  w.u32(f.depth);
  w.f32s(f.data);
  return w.done();
}

export function decodeFeatureMapFile(buf: Buffer): FeatureMap {
  const r = new ByteReader(buf);
  const magic = r.magic();
  if (magic !== FEATURE_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(magic)} at byte 0`);
  }
  const version = r.u32();
  if (version !== FORMAT_VERSION) {
    throw new Error(`unsupported version ${version} at byte 4`);
  }
  const height = r.u32();
  const width = r.u32();
  const depth = r.u32();
  const data = r.f32s(height * width * depth);
  if (r.remaining !== 0) throw new Error(`trailing bytes at byte ${r.offset}`);
  return { height, width, depth, data };
}
