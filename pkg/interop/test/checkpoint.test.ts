import { describe, expect, test } from "vitest";

import {
  Checkpoint,
  checkpointToWeights,
  exportWeights,
  readCheckpoint,
  writeCheckpoint,
} from "../src/checkpoint";
import { decodeWeightsFile, encodeDecoderWeights, isReference } from "../src/formats";
import { DecoderArch, coarseShapes, fineShapes } from "../src/model";
import { Rng } from "../src/rand";

const ARCH: DecoderArch = { featureDepth: 6, hidden: 16, coarseLayers: 2, fineLayers: 2, ensemble: true };

/** Framework-convention checkpoint ([out, in] weights) for a given arch. */
function makeCheckpoint(seed: number, a: DecoderArch): Checkpoint {
  const rng = new Rng(seed);
  const tensors: Checkpoint = new Map();
  const put = (stage: string, shapes: Array<[number, number]>) => {
    shapes.forEach(([rows, cols], i) => {
      tensors.set(`${stage}.${i}.weight`, {
        dtype: "F32",
        shape: [cols, rows],
        data: rng.f32Array(rows * cols, -0.5, 0.5),
      });
      tensors.set(`${stage}.${i}.bias`, {
        dtype: "F32",
        shape: [cols],
        data: rng.f32Array(cols, -0.1, 0.1),
      });
    });
  };
  put("coarse", coarseShapes(a));
  put("fine", fineShapes(a));
  return tensors;
}

describe("safetensors container", () => {
  test("write/read round trip preserves names, shapes, and values", () => {
    const ckpt = makeCheckpoint(1, ARCH);
    const back = readCheckpoint(writeCheckpoint(ckpt));
    expect([...back.keys()]).toEqual([...ckpt.keys()]);
    for (const [name, t] of ckpt) {
      expect(back.get(name)!.shape).toEqual(t.shape);
      expect(Array.from(back.get(name)!.data)).toEqual(Array.from(t.data));
    }
  });

  test("non-float32 tensors are refused by name", () => {
    const header = Buffer.from(
      JSON.stringify({ "fine.0.bias": { dtype: "F64", shape: [2], data_offsets: [0, 16] } }),
      "utf8",
    );
    const len = Buffer.alloc(8);
    len.writeBigUInt64LE(BigInt(header.length), 0);
    const blob = Buffer.concat([len, header, Buffer.alloc(16)]);
    expect(() => readCheckpoint(blob)).toThrow(/fine\.0\.bias.*F64/);
  });
});

describe("weight export", () => {
  test("export then parse recovers the transposed matrices exactly", () => {
    const ckpt = makeCheckpoint(3, ARCH);
    const blob = exportWeights(writeCheckpoint(ckpt), ARCH);
    const back = decodeWeightsFile(blob);
    expect(isReference(back)).toBe(false);
    if (isReference(back)) return;
    let worst = 0;
    for (const [stage, layers] of [["coarse", back.coarse], ["fine", back.fine]] as const) {
      layers.forEach((l, i) => {
        const src = ckpt.get(`${stage}.${i}.weight`)!;
        for (let r = 0; r < l.rows; r++) {
          for (let c = 0; c < l.cols; c++) {
            worst = Math.max(worst, Math.abs(l.w[r * l.cols + c] - src.data[c * l.rows + r]));
          }
        }
      });
    }
    expect(worst).toBe(0);
  });

  test("export, parse, re-encode is byte-identical", () => {
    const blob = exportWeights(writeCheckpoint(makeCheckpoint(4, ARCH)), ARCH);
    const back = decodeWeightsFile(blob);
    if (isReference(back)) throw new Error("unexpected reference weights");
    expect(encodeDecoderWeights(back).equals(blob)).toBe(true);
  });

  test("a transposed layer is a named shape error, not silent corruption", () => {
    const ckpt = makeCheckpoint(5, ARCH);
    // the rgb readout is 3x16 in framework convention; store it as 16x3
    const bad = ckpt.get("fine.2.weight")!;
    bad.shape = [bad.shape[1], bad.shape[0]];
    expect(() => checkpointToWeights(ckpt, ARCH)).toThrow(
      /"fine\.2\.weight".*expected shape 3x16.*16x3/,
    );
  });

  test("missing tensors are reported by name", () => {
    const ckpt = makeCheckpoint(6, ARCH);
    ckpt.delete("coarse.1.bias");
    expect(() => checkpointToWeights(ckpt, ARCH)).toThrow(/"coarse\.1\.bias"/);
  });

  test("the ensemble-free architecture expects the narrower first layer", () => {
    const center: DecoderArch = { ...ARCH, ensemble: false };
    const ckpt = makeCheckpoint(7, center);
    const blob = exportWeights(writeCheckpoint(ckpt), center);
    const back = decodeWeightsFile(blob);
    if (isReference(back)) throw new Error("unexpected reference weights");
    expect(back.arch.ensemble).toBe(false);
    expect(back.coarse[0].rows).toBe(9 * 6 + 4);
    // and an ensemble checkpoint does not satisfy the center-mode shapes
    expect(() => checkpointToWeights(makeCheckpoint(8, ARCH), center)).toThrow(
      /"coarse\.0\.weight"/,
    );
  });
});
