#!/usr/bin/env node
/** Batch figure renderer for the simulator's CSV outputs.
 *
 * Usage: render --kind {mse_trace|roc|estimation|rate_cdf}
 *               --in PATH [--in PATH2] --out PATH.svg
 */

import { writeFileSync } from "fs";
import { SchemaError, readCsv } from "./csv.js";
import { FIGURE_KINDS } from "./figures.js";

interface Args {
  kind: string;
  inputs: string[];
  out: string;
}

export function parseArgs(argv: string[]): Args {
  let kind = "";
  let out = "";
  const inputs: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--kind":
        kind = argv[++i];
        break;
      case "--in":
        inputs.push(argv[++i]);
        break;
      case "--out":
        out = argv[++i];
        break;
      default:
        throw new Error(`unknown argument: ${argv[i]}`);
    }
  }
  if (!kind || inputs.length === 0 || !out) {
    throw new Error("usage: render --kind KIND --in CSV [--in CSV2] --out SVG");
  }
  if (!(kind in FIGURE_KINDS)) {
    throw new Error(
      `unknown kind ${kind}; expected one of ${Object.keys(FIGURE_KINDS).join(", ")}`);
  }
  return { kind, inputs, out };
}

export function renderToString(kind: string, inputPath: string): string {
  const table = readCsv(inputPath);
  return FIGURE_KINDS[kind](table, inputPath);
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  try {
    // one figure per input; multiple inputs get numbered suffixes
    args.inputs.forEach((input, i) => {
      const svg = renderToString(args.kind, input);
      const out = args.inputs.length === 1
        ? args.out
        : args.out.replace(/(\.\w+)?$/, (ext) => `_${i + 1}${ext || ".svg"}`);
      writeFileSync(out, svg);
      console.log(`wrote ${out}`);
    });
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error: ${err.message}`);
    } else {
      console.error(String(err instanceof Error ? err.message : err));
    }
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("render.js")) {
  process.exit(main(process.argv.slice(2)));
}
