/**
 * Shapes of the coarse-to-fine decoder and its flat-array containers.
 *
 * Matrices are stored row-major with rows = input width and cols = output
 * width, i.e. activations multiply from the left.  Feature maps are
 * (height, width, depth) row-major with depth innermost.
 */

export interface Layer {
  rows: number;
  cols: number;
  /** rows*cols values, row-major. */
  w: Float64Array;
  /** cols values. */
  b: Float64Array;
}

export interface DecoderArch {
  featureDepth: number;
  hidden: number;
  /** ReLU layers of the slice (coarse) stage. */
  coarseLayers: number;
  /** Hidden ReLU layers of the fine stage; the linear rgb layer is on top. */
  fineLayers: number;
  ensemble: boolean;
}

export interface DecoderWeights {
  arch: DecoderArch;
  coarse: Layer[];
  fine: Layer[];
}

/** Single-stage per-pixel decoder weights (hidden ReLU layers + linear rgb). */
export interface ReferenceWeights {
  featureDepth: number;
  hidden: number;
  layers: Layer[];
}

export interface FeatureMap {
  height: number;
  width: number;
  depth: number;
  /** height*width*depth values, row-major, channels innermost. */
  data: Float64Array;
}

/** Width of the gathered latent code: 4x4 cells with the vertex ensemble, 3x3 without. */
export function codeWidth(arch: DecoderArch): number {
  return (arch.ensemble ? 16 : 9) * arch.featureDepth;
}

export function coarseShapes(arch: DecoderArch): Array<[number, number]> {
  const shapes: Array<[number, number]> = [[codeWidth(arch) + 4, arch.hidden]];
  for (let i = 1; i < arch.coarseLayers; i++) shapes.push([arch.hidden, arch.hidden]);
  return shapes;
}

export function fineShapes(arch: DecoderArch): Array<[number, number]> {
  const shapes: Array<[number, number]> = [[arch.hidden + 2, arch.hidden]];
  for (let i = 1; i < arch.fineLayers; i++) shapes.push([arch.hidden, arch.hidden]);
  shapes.push([arch.hidden, 3]);
  return shapes;
}

export function referenceShapes(
  featureDepth: number,
  hidden: number,
  hiddenLayers: number,
): Array<[number, number]> {
  if (hiddenLayers < 1) throw new Error("reference decoder needs at least one hidden layer");
  const shapes: Array<[number, number]> = [[9 * featureDepth + 2, hidden]];
  for (let i = 1; i < hiddenLayers; i++) shapes.push([hidden, hidden]);
  shapes.push([hidden, 3]);
  return shapes;
}

export function checkStage(name: string, layers: Layer[], shapes: Array<[number, number]>): void {
  if (layers.length !== shapes.length) {
    throw new Error(`${name} stage has ${layers.length} layers, expected ${shapes.length}`);
  }
  for (let i = 0; i < layers.length; i++) {
    const [rows, cols] = shapes[i];
    const l = layers[i];
    if (l.rows !== rows || l.cols !== cols || l.w.length !== rows * cols || l.b.length !== cols) {
      throw new Error(`${name} layer ${i}: got ${l.rows}x${l.cols}, expected ${rows}x${cols}`);
    }
  }
}
