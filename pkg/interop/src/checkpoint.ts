/**
 * Checkpoint conversion into the decoder's wire format.
 *
 * Input checkpoints are safetensors files: an 8-byte little-endian header
 * length, a JSON header mapping tensor names to dtype/shape/data_offsets,
 * then the raw tensor bytes.  Linear layers follow the usual framework
 * convention of weight shape [out_features, in_features] row-major under the
 * names "<stage>.<index>.weight" / "<stage>.<index>.bias", so the export
 * transposes every weight matrix into the activations-on-the-left layout of
 * the wire format.  Shape errors name the offending tensor rather than
 * writing a silently corrupt file.
 */

import { DecoderArch, DecoderWeights, Layer, coarseShapes, fineShapes } from "./model";
import { encodeDecoderWeights } from "./formats";

export interface CheckpointTensor {
  dtype: string;
  shape: number[];
  /** Row-major values, widened to 64-bit on read. */
  data: Float64Array;
}

export type Checkpoint = Map<string, CheckpointTensor>;

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function readCheckpoint(buf: Buffer): Checkpoint {
  if (buf.length < 8) throw new Error(`truncated checkpoint: ${buf.length} bytes`);
  const headerLen = buf.readBigUInt64LE(0);
  if (headerLen > BigInt(buf.length - 8)) {
    throw new Error(`checkpoint header length ${headerLen} exceeds file size ${buf.length}`);
  }
  const header = JSON.parse(buf.subarray(8, 8 + Number(headerLen)).toString("utf8")) as Record<
    string,
    HeaderEntry | Record<string, string>
  >;
  const dataStart = 8 + Number(headerLen);
  const out: Checkpoint = new Map();
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const { dtype, shape, data_offsets } = entry as HeaderEntry;
    if (dtype !== "F32") {
      throw new Error(`tensor "${name}": unsupported dtype ${dtype}, only F32 checkpoints convert`);
    }
    const [begin, end] = data_offsets;
    const n = numel(shape);
    if (end - begin !== 4 * n) {
      throw new Error(`tensor "${name}": ${end - begin} data bytes for shape [${shape}]`);
    }
    const bytes = buf.subarray(dataStart + begin, dataStart + end);
    if (bytes.length !== 4 * n) {
      throw new Error(`tensor "${name}": data region truncated`);
    }
    const data = new Float64Array(n);
    for (let i = 0; i < n; i++) data[i] = bytes.readFloatLE(4 * i);
    out.set(name, { dtype, shape, data });
  }
  return out;
}

/** Serialize float32 tensors in insertion order; values are rounded to f32. */
export function writeCheckpoint(tensors: Checkpoint): Buffer {
  const header: Record<string, HeaderEntry> = {};
  let offset = 0;
  const blobs: Buffer[] = [];
  for (const [name, t] of tensors) {
    const n = numel(t.shape);
    if (t.data.length !== n) {
      throw new Error(`tensor "${name}": ${t.data.length} values for shape [${t.shape}]`);
    }
    const blob = Buffer.alloc(4 * n);
    for (let i = 0; i < n; i++) blob.writeFloatLE(t.data[i], 4 * i);
    header[name] = { dtype: "F32", shape: t.shape, data_offsets: [offset, offset + 4 * n] };
    offset += 4 * n;
    blobs.push(blob);
  }
  const headerJson = Buffer.from(JSON.stringify(header), "utf8");
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(headerJson.length), 0);
  return Buffer.concat([lenBuf, headerJson, ...blobs]);
}

function takeLayer(
  ckpt: Checkpoint,
  stage: string,
  index: number,
  rows: number,
  cols: number,
): Layer {
  const wName = `${stage}.${index}.weight`;
  const bName = `${stage}.${index}.bias`;
  const wT = ckpt.get(wName);
  const bT = ckpt.get(bName);
  if (!wT) throw new Error(`checkpoint is missing tensor "${wName}"`);
  if (!bT) throw new Error(`checkpoint is missing tensor "${bName}"`);
  // framework convention: weight is [out_features, in_features]
  if (wT.shape.length !== 2 || wT.shape[0] !== cols || wT.shape[1] !== rows) {
    throw new Error(
      `tensor "${wName}": expected shape ${cols}x${rows} (out x in), checkpoint has ${wT.shape.join("x")}`,
    );
  }
  if (bT.shape.length !== 1 || bT.shape[0] !== cols) {
    throw new Error(
      `tensor "${bName}": expected shape ${cols}, checkpoint has ${bT.shape.join("x")}`,
    );
  }
  const w = new Float64Array(rows * cols);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) w[r * cols + c] = wT.data[c * rows + r];
  }
  return { rows, cols, w, b: bT.data.slice() };
}

export function checkpointToWeights(ckpt: Checkpoint, arch: DecoderArch): DecoderWeights {
  const coarse = coarseShapes(arch).map(([rows, cols], i) =>
    takeLayer(ckpt, "coarse", i, rows, cols),
  );
  const fine = fineShapes(arch).map(([rows, cols], i) => takeLayer(ckpt, "fine", i, rows, cols));
  return { arch, coarse, fine };
}

/** Convert a safetensors checkpoint into the decoder wire format. */
export function exportWeights(checkpointBuf: Buffer, arch: DecoderArch): Buffer {
  return encodeDecoderWeights(checkpointToWeights(readCheckpoint(checkpointBuf), arch));
}
