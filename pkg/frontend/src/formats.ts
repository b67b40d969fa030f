/**
 * Binary interchange writers/readers matching the pipeline's version-1
 * layouts exactly (little-endian throughout).
 *
 *   NMDS: "NMDS" u16 version, u32 N, u32 D_local, u32 D_sem, u32 D_fused,
 *         N x 2 float64 keypoints, then present matrices row-major float32.
 *   NMFM: "NMFM" u16 version, u32 H, u32 W, u32 C, float32 stride,
 *         H x W x C row-major float32 data.
 */

export const NMDS_VERSION = 1;
export const NMFM_VERSION = 1;

export interface DescriptorSet {
  /** [x, y] pairs, row-major */
  keypoints: Float64Array;
  local: Float32Array | null;
  dLocal: number;
  semantic: Float32Array | null;
  dSem: number;
}

export interface FeatureMapFile {
  height: number;
  width: number;
  channels: number;
  stride: number;
  data: Float32Array;
}

export function encodeDescriptors(set: DescriptorSet): Buffer {
  const n = set.keypoints.length / 2;
  if (!Number.isInteger(n)) throw new Error("keypoints array must hold x,y pairs");
  const dLocal = set.local ? set.dLocal : 0;
  const dSem = set.semantic ? set.dSem : 0;
  if (set.local && set.local.length !== n * dLocal) throw new Error("local matrix size mismatch");
  if (set.semantic && set.semantic.length !== n * dSem) throw new Error("semantic matrix size mismatch");
  const size = 22 + n * 16 + n * dLocal * 4 + n * dSem * 4;
  const buf = Buffer.alloc(size);
  buf.write("NMDS", 0, "ascii");
  buf.writeUInt16LE(NMDS_VERSION, 4);
  buf.writeUInt32LE(n, 6);
  buf.writeUInt32LE(dLocal, 10);
  buf.writeUInt32LE(dSem, 14);
  buf.writeUInt32LE(0, 18); // fused never produced by the extractor
  let off = 22;
  for (let i = 0; i < n * 2; i++) {
    buf.writeDoubleLE(set.keypoints[i], off);
    off += 8;
  }
  for (const mat of [set.local, set.semantic]) {
    if (!mat) continue;
    for (let i = 0; i < mat.length; i++) {
      buf.writeFloatLE(mat[i], off);
      off += 4;
    }
  }
  return buf;
}

export function decodeDescriptors(buf: Buffer): DescriptorSet {
  if (buf.toString("ascii", 0, 4) !== "NMDS") throw new Error("bad NMDS magic");
  if (buf.readUInt16LE(4) !== NMDS_VERSION) throw new Error("unsupported NMDS version");
  const n = buf.readUInt32LE(6);
  const dLocal = buf.readUInt32LE(10);
  const dSem = buf.readUInt32LE(14);
  const dFused = buf.readUInt32LE(18);
  let off = 22;
  const keypoints = new Float64Array(n * 2);
  for (let i = 0; i < n * 2; i++) {
    keypoints[i] = buf.readDoubleLE(off);
    off += 8;
  }
  const readMatrix = (width: number): Float32Array | null => {
    if (width === 0) return null;
    const mat = new Float32Array(n * width);
    for (let i = 0; i < mat.length; i++) {
      mat[i] = buf.readFloatLE(off);
      off += 4;
    }
    return mat;
  };
  const local = readMatrix(dLocal);
  const semantic = readMatrix(dSem);
  readMatrix(dFused);
  if (off !== buf.length) throw new Error(`trailing bytes at ${off}`);
  return { keypoints, local, dLocal, semantic, dSem };
}

export function encodeFeatureMap(map: FeatureMapFile): Buffer {
  const { height, width, channels, stride, data } = map;
  if (data.length !== height * width * channels) throw new Error("feature data size mismatch");
  const buf = Buffer.alloc(22 + data.length * 4);
  buf.write("NMFM", 0, "ascii");
  buf.writeUInt16LE(NMFM_VERSION, 4);
  buf.writeUInt32LE(height, 6);
  buf.writeUInt32LE(width, 10);
  buf.writeUInt32LE(channels, 14);
  buf.writeFloatLE(stride, 18);
  let off = 22;
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], off);
    off += 4;
  }
  return buf;
}

export function decodeFeatureMap(buf: Buffer): FeatureMapFile {
  if (buf.toString("ascii", 0, 4) !== "NMFM") throw new Error("bad NMFM magic");
  if (buf.readUInt16LE(4) !== NMFM_VERSION) throw new Error("unsupported NMFM version");
  const height = buf.readUInt32LE(6);
  const width = buf.readUInt32LE(10);
  const channels = buf.readUInt32LE(14);
  const stride = buf.readFloatLE(18);
  const data = new Float32Array(height * width * channels);
  let off = 22;
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(off);
    off += 4;
  }
  if (off !== buf.length) throw new Error(`trailing bytes at ${off}`);
  return { height, width, channels, stride, data };
}

/**
 * Bilinear interpolation with the pipeline's conventions: cell (r, c) sits
 * at image position (c * stride, r * stride); constant extension within
 * half a cell of the border; out of that range is an error.
 */
export function bilinearSample(map: FeatureMapFile, x: number, y: number): Float64Array {
  const qx = x / map.stride;
  const qy = y / map.stride;
  if (qx < -0.5 || qx > map.width - 0.5 || qy < -0.5 || qy > map.height - 0.5) {
    throw new Error(`position (${x}, ${y}) outside feature map bounds`);
  }
  const x0 = Math.floor(qx);
  const y0 = Math.floor(qy);
  const fx = qx - x0;
  const fy = qy - y0;
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  const x0c = clamp(x0, map.width - 1);
  const x1c = clamp(x0 + 1, map.width - 1);
  const y0c = clamp(y0, map.height - 1);
  const y1c = clamp(y0 + 1, map.height - 1);
  const c = map.channels;
  const out = new Float64Array(c);
  const at = (r: number, col: number, ch: number) => map.data[(r * map.width + col) * c + ch];
  for (let ch = 0; ch < c; ch++) {
    out[ch] =
      (1 - fx) * (1 - fy) * at(y0c, x0c, ch) +
      fx * (1 - fy) * at(y0c, x1c, ch) +
      (1 - fx) * fy * at(y1c, x0c, ch) +
      fx * fy * at(y1c, x1c, ch);
  }
  return out;
}
