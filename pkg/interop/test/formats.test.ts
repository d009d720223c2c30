import { describe, expect, test } from "vitest";

import {
  decodeFeatureMapFile,
  decodeWeightsFile,
  encodeDecoderWeights,
  encodeFeatureMap,
  encodeReferenceWeights,
  isReference,
} from "../src/formats";
import {
  DecoderArch,
  DecoderWeights,
  ReferenceWeights,
  coarseShapes,
  fineShapes,
  referenceShapes,
} from "../src/model";
import { Rng } from "../src/rand";

function makeWeights(seed: number, a: DecoderArch): DecoderWeights {
  const rng = new Rng(seed);
  const layer = ([rows, cols]: [number, number]) => ({
    rows,
    cols,
    w: rng.f32Array(rows * cols, -0.5, 0.5),
    b: rng.f32Array(cols, -0.1, 0.1),
  });
  return { arch: a, coarse: coarseShapes(a).map(layer), fine: fineShapes(a).map(layer) };
}

const ENS: DecoderArch = { featureDepth: 6, hidden: 16, coarseLayers: 2, fineLayers: 2, ensemble: true };
const CENTER: DecoderArch = { ...ENS, ensemble: false };

describe("decoder weight files", () => {
  test("encode/decode round trip preserves every value and the mode", () => {
    for (const a of [ENS, CENTER]) {
      const w = makeWeights(3, a);
      const blob = encodeDecoderWeights(w);
      const back = decodeWeightsFile(blob);
      expect(isReference(back)).toBe(false);
      if (isReference(back)) return;
      expect(back.arch).toEqual(a);
      expect(Array.from(back.coarse[0].w)).toEqual(Array.from(w.coarse[0].w));
      expect(Array.from(back.fine[back.fine.length - 1].b)).toEqual(
        Array.from(w.fine[w.fine.length - 1].b));
      // values were float32-snapped, so a second encode is byte-identical
      expect(encodeDecoderWeights(back).equals(blob)).toBe(true);
    }
  });

  test("header fields land where the format says", () => {
    const blob = encodeDecoderWeights(makeWeights(4, ENS));
    expect(blob.subarray(0, 4).toString("ascii")).toBe("DIIF");
    expect(blob.readUInt32LE(4)).toBe(1); // version
    expect(blob.readUInt32LE(8)).toBe(6); // feature depth
    expect(blob.readUInt32LE(12)).toBe(16); // hidden
    expect(blob.readUInt32LE(16)).toBe(2); // coarse layers
    expect(blob.readUInt32LE(20)).toBe(3); // fine layers incl rgb readout
  });

  test("bad magic, truncation, and trailing bytes are rejected", () => {
    const blob = encodeDecoderWeights(makeWeights(5, ENS));
    const wrong = Buffer.from(blob);
    wrong.write("NOPE", 0, "ascii");
    expect(() => decodeWeightsFile(wrong)).toThrow(/magic/);
    expect(() => decodeWeightsFile(blob.subarray(0, blob.length - 3))).toThrow(/truncated/);
    expect(() => decodeWeightsFile(Buffer.concat([blob, Buffer.from([0])]))).toThrow(/trailing/);
  });

  test("unsupported version is rejected", () => {
    const blob = Buffer.from(encodeDecoderWeights(makeWeights(6, ENS)));
    blob.writeUInt32LE(9, 4);
    expect(() => decodeWeightsFile(blob)).toThrow(/version 9/);
  });
});

describe("reference weight files", () => {
  test("round trip through the single-stage layout", () => {
    const rng = new Rng(7);
    const layer = ([rows, cols]: [number, number]) => ({
      rows,
      cols,
      w: rng.f32Array(rows * cols, -0.5, 0.5),
      b: rng.f32Array(cols, -0.1, 0.1),
    });
    const ref: ReferenceWeights = {
      featureDepth: 6,
      hidden: 16,
      layers: referenceShapes(6, 16, 2).map(layer),
    };
    const blob = encodeReferenceWeights(ref);
    expect(blob.subarray(0, 4).toString("ascii")).toBe("LIIR");
    const back = decodeWeightsFile(blob);
    expect(isReference(back)).toBe(true);
    if (!isReference(back)) return;
    expect(back.layers.length).toBe(3);
    expect(Array.from(back.layers[0].w)).toEqual(Array.from(ref.layers[0].w));
    expect(encodeReferenceWeights(back).equals(blob)).toBe(true);
  });
});

describe("feature map files", () => {
  test("round trip is exact for float32-snapped data", () => {
    const rng = new Rng(9);
    const f = { height: 3, width: 5, depth: 4, data: rng.f32Array(60, 0, 1) };
    const blob = encodeFeatureMap(f);
    expect(blob.subarray(0, 4).toString("ascii")).toBe("DIFM");
    expect(blob.length).toBe(20 + 4 * 60);
    const back = decodeFeatureMapFile(blob);
    expect([back.height, back.width, back.depth]).toEqual([3, 5, 4]);
    expect(Array.from(back.data)).toEqual(Array.from(f.data));
  });

  test("size mismatches are rejected", () => {
    const blob = encodeFeatureMap({ height: 2, width: 2, depth: 3, data: new Float64Array(12) });
    expect(() => decodeFeatureMapFile(blob.subarray(0, 30))).toThrow(/truncated/);
    expect(() => decodeFeatureMapFile(Buffer.concat([blob, Buffer.from([1, 2])]))).toThrow(/trailing/);
  });
});
