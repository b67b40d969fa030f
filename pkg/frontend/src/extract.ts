/** Orchestration: image file -> NMDS + NMFM interchange files. */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { basename, extname, join } from "node:path";

import { ConfigError, resolveBackend } from "./backend.js";
import { bilinearSample, encodeDescriptors, encodeFeatureMap } from "./formats.js";
import { decodePng } from "./png.js";

export interface ExtractConfig {
  images: string[];
  outDir: string;
  maxKeypoints: number;
  model: string;
}

export interface ExtractSummary {
  image: string;
  nmds: string;
  nmfm: string;
  keypoints: number;
  channels: number;
  /** adapter-side bilinear samples of the map at the first few keypoints */
  crossCheck: { x: number; y: number; values: number[] }[];
}

export function validateConfig(cfg: ExtractConfig): void {
  if (!cfg.images.length) throw new ConfigError("at least one --image is required");
  if (cfg.maxKeypoints < 4) throw new ConfigError("--max-kp must be at least 4");
  resolveBackend(cfg.model);
}

export function extract(cfg: ExtractConfig): ExtractSummary[] {
  validateConfig(cfg);
  const backend = resolveBackend(cfg.model);
  mkdirSync(cfg.outDir, { recursive: true });
  const summaries: ExtractSummary[] = [];
  const used = new Map<string, number>();
  for (const imagePath of cfg.images) {
    const image = decodePng(readFileSync(imagePath));
    const { descriptors, featureMap } = backend.run(image, cfg.maxKeypoints);
    const n = descriptors.keypoints.length / 2;
    if (n === 0) {
      console.warn(`warning: no keypoints detected in ${imagePath}; writing an empty descriptor set`);
    }
    // images from different directories may share a basename
    let stem = basename(imagePath, extname(imagePath));
    const seen = used.get(stem) ?? 0;
    used.set(stem, seen + 1);
    if (seen > 0) stem = `${stem}-${seen}`;
    const nmds = join(cfg.outDir, `${stem}.nmds`);
    const nmfm = join(cfg.outDir, `${stem}.nmfm`);
    writeFileSync(nmds, encodeDescriptors(descriptors));
    writeFileSync(nmfm, encodeFeatureMap(featureMap));
    const crossCheck = [];
    for (let k = 0; k < Math.min(n, 5); k++) {
      const x = descriptors.keypoints[2 * k];
      const y = descriptors.keypoints[2 * k + 1];
      crossCheck.push({ x, y, values: Array.from(bilinearSample(featureMap, x, y)) });
    }
    summaries.push({
      image: imagePath,
      nmds,
      nmfm,
      keypoints: n,
      channels: featureMap.channels,
      crossCheck,
    });
  }
  return summaries;
}
