/**
 * Converts a safetensors checkpoint into a decoder weight file.
 *
 * Usage:
 *   ts-node src/export_cli.ts <checkpoint.safetensors> <out.bin>
 *     --depth N --hidden N [--coarse N] [--fine N] [--center]
 *
 * The architecture flags declare the expected layer shapes; any checkpoint
 * tensor that does not match them aborts the export with the tensor's name.
 * --center selects the ensemble-free coarse input (3x3 window).
 */

import * as fs from "node:fs";

import { exportWeights } from "./checkpoint";

function main(): void {
  const args = process.argv.slice(2);
  const positional: string[] = [];
  let depth = 0;
  let hidden = 256;
  let coarseLayers = 2;
  let fineLayers = 2;
  let ensemble = true;
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--depth") depth = Number(args[++i]);
    else if (args[i] === "--hidden") hidden = Number(args[++i]);
    else if (args[i] === "--coarse") coarseLayers = Number(args[++i]);
    else if (args[i] === "--fine") fineLayers = Number(args[++i]);
    else if (args[i] === "--center") ensemble = false;
    else positional.push(args[i]);
  }
  if (positional.length !== 2 || !Number.isInteger(depth) || depth < 1) {
    console.error("usage: export_cli <checkpoint.safetensors> <out.bin> --depth N "
      + "[--hidden N] [--coarse N] [--fine N] [--center]");
    process.exit(2);
  }
  const blob = exportWeights(fs.readFileSync(positional[0]), {
    featureDepth: depth,
    hidden,
    coarseLayers,
    fineLayers,
    ensemble,
  });
  fs.writeFileSync(positional[1], blob);
  console.log(`wrote ${positional[1]} (${blob.length} bytes)`);
}

main();
