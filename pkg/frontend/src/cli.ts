#!/usr/bin/env node
/**
 * extract --image X [--image Y ...] --out DIR [--max-kp N] [--model builtin]
 *
 * Detects keypoints and dense context features on each image and writes
 * pipeline-compatible NMDS/NMFM files into DIR. Exit codes: 0 ok, 2 usage /
 * config error, 3 data error.
 */

import { parseArgs } from "node:util";

import { ConfigError } from "./backend.js";
import { extract } from "./extract.js";

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        image: { type: "string", multiple: true },
        out: { type: "string" },
        "max-kp": { type: "string", default: "256" },
        model: { type: "string", default: "builtin" },
      },
      allowPositionals: false,
    });
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  const { values } = parsed;
  if (!values.image?.length || !values.out) {
    console.error("usage: extract --image X [--image Y ...] --out DIR [--max-kp N] [--model builtin]");
    return 2;
  }
  const maxKeypoints = Number(values["max-kp"]);
  if (!Number.isFinite(maxKeypoints)) {
    console.error(`usage error: --max-kp must be a number, got ${values["max-kp"]}`);
    return 2;
  }
  try {
    const summaries = extract({
      images: values.image,
      outDir: values.out,
      maxKeypoints,
      model: values.model ?? "builtin",
    });
    for (const s of summaries) {
      console.log(JSON.stringify(s));
    }
    return 0;
  } catch (err) {
    if (err instanceof ConfigError) {
      console.error(`config error: ${err.message}`);
      return 2;
    }
    console.error(`error: ${(err as Error).message}`);
    return 3;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
