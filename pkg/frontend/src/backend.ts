/**
 * Extraction backends. The built-in backend is a deterministic
 * difference-of-Gaussians keypoint detector with mean-free normalized patch
 * descriptors plus a dense multi-scale context feature map; it exists so the
 * adapter runs fully offline. External pretrained models plug in behind the
 * same interface via a checkpoint directory, which must exist.
 */

import { existsSync } from "node:fs";

import { gaussianBlur, gradientMagnitude, meanStd, subtract } from "./image.js";
import type { GrayImage } from "./png.js";
import type { DescriptorSet, FeatureMapFile } from "./formats.js";

export interface ExtractionResult {
  descriptors: DescriptorSet;
  featureMap: FeatureMapFile;
}

export interface ExtractionBackend {
  name: string;
  run(image: GrayImage, maxKeypoints: number): ExtractionResult;
}

export class ConfigError extends Error {}

const PATCH = 15;
const DETECT_SIGMA = 1.6;
const MIN_DISTANCE = 8;
const RESPONSE_FLOOR = 1e-4;
const MAP_STRIDE = 4;
const MAP_SIGMAS = [4, 8, 16, 32];

interface Candidate {
  x: number;
  y: number;
  score: number;
}

function detectKeypoints(image: GrayImage, maxKeypoints: number): Candidate[] {
  const fine = gaussianBlur(image, DETECT_SIGMA);
  const coarse = gaussianBlur(image, 2 * DETECT_SIGMA);
  const dog = subtract(fine, coarse);
  const { width, height, data } = dog;
  const margin = (PATCH - 1) / 2 + 1;
  const candidates: Candidate[] = [];
  for (let y = margin; y < height - margin; y++) {
    for (let x = margin; x < width - margin; x++) {
      const v = Math.abs(data[y * width + x]);
      if (v < RESPONSE_FLOOR) continue;
      let isMax = true;
      for (let dy = -1; dy <= 1 && isMax; dy++) {
        for (let dx = -1; dx <= 1; dx++) {
          if (dx === 0 && dy === 0) continue;
          if (Math.abs(data[(y + dy) * width + (x + dx)]) > v) {
            isMax = false;
            break;
          }
        }
      }
      if (isMax) candidates.push({ x, y, score: v });
    }
  }
  // deterministic order: score desc, then position
  candidates.sort((a, b) => b.score - a.score || a.y - b.y || a.x - b.x);
  const kept: Candidate[] = [];
  for (const cand of candidates) {
    if (kept.length >= maxKeypoints) break;
    let ok = true;
    for (const prev of kept) {
      const d = Math.hypot(cand.x - prev.x, cand.y - prev.y);
      if (d < MIN_DISTANCE) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push(cand);
  }
  return kept;
}

function patchDescriptors(image: GrayImage, points: Candidate[]): Float32Array {
  const half = (PATCH - 1) / 2;
  const d = PATCH * PATCH;
  const out = new Float32Array(points.length * d);
  for (let k = 0; k < points.length; k++) {
    const { x, y } = points[k];
    const patch = new Float64Array(d);
    let mean = 0;
    for (let dy = -half; dy <= half; dy++) {
      for (let dx = -half; dx <= half; dx++) {
        const v = image.data[(y + dy) * image.width + (x + dx)];
        patch[(dy + half) * PATCH + (dx + half)] = v;
        mean += v;
      }
    }
    mean /= d;
    let norm = 0;
    for (let i = 0; i < d; i++) {
      patch[i] -= mean;
      norm += patch[i] * patch[i];
    }
    norm = Math.sqrt(norm);
    if (norm > 1e-12) {
      for (let i = 0; i < d; i++) out[k * d + i] = patch[i] / norm;
    }
  }
  return out;
}

function gridPositions(extent: number, step: number): number[] {
  // every pixel within half a cell of the grid; last cell clamps to the edge
  let n = Math.floor((extent - 1) / step) + 1;
  if ((n - 0.5) * step < extent - 1) n += 1;
  const out: number[] = [];
  for (let i = 0; i < n; i++) out.push(Math.min(i * step, extent - 1));
  return out;
}

function contextFeatureMap(image: GrayImage): FeatureMapFile {
  const planes: GrayImage[] = [];
  const blurred = MAP_SIGMAS.map((s) => gaussianBlur(image, s));
  planes.push(...blurred);
  for (let i = 0; i + 1 < blurred.length; i++) planes.push(subtract(blurred[i], blurred[i + 1]));
  planes.push(gradientMagnitude(blurred[0]));
  planes.push(gradientMagnitude(blurred[1]));
  const rows = gridPositions(image.height, MAP_STRIDE);
  const cols = gridPositions(image.width, MAP_STRIDE);
  const channels = planes.length;
  const data = new Float32Array(rows.length * cols.length * channels);
  planes.forEach((plane, ch) => {
    const { mean, std } = meanStd(plane.data);
    const denom = std > 1e-12 ? std : 1.0;
    rows.forEach((ry, r) => {
      cols.forEach((cx, c) => {
        data[(r * cols.length + c) * channels + ch] = (plane.data[ry * image.width + cx] - mean) / denom;
      });
    });
  });
  return { height: rows.length, width: cols.length, channels, stride: MAP_STRIDE, data };
}

export const builtinBackend: ExtractionBackend = {
  name: "builtin",
  run(image, maxKeypoints) {
    const points = detectKeypoints(image, maxKeypoints);
    const keypoints = new Float64Array(points.length * 2);
    points.forEach((p, i) => {
      keypoints[2 * i] = p.x;
      keypoints[2 * i + 1] = p.y;
    });
    return {
      descriptors: {
        keypoints,
        local: patchDescriptors(image, points),
        dLocal: PATCH * PATCH,
        semantic: null,
        dSem: 0,
      },
      featureMap: contextFeatureMap(image),
    };
  },
};

/**
 * Resolve a backend identifier. External pretrained exports are referenced
 * as `external:<checkpoint-dir>`; the directory must exist, and actually
 * loading one requires the model files documented in the README.
 */
export function resolveBackend(model: string): ExtractionBackend {
  if (model === "builtin") return builtinBackend;
  if (model.startsWith("external:")) {
    const checkpoint = model.slice("external:".length);
    if (!checkpoint || !existsSync(checkpoint)) {
      throw new ConfigError(`checkpoint not found: ${checkpoint || "(empty path)"}`);
    }
    throw new ConfigError(
      `external checkpoint loading is not bundled in this environment; ` +
        `export features with your model runtime and convert them, or use the builtin backend`
    );
  }
  throw new ConfigError(`unknown model ${JSON.stringify(model)}`);
}
