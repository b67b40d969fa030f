/**
 * Minimal PNG codec for the image kinds this adapter meets: non-interlaced
 * 8/16-bit grayscale and 8-bit RGB/RGBA. Decoding returns a float64
 * grayscale plane in [0, 1]; the encoder exists so tests can fabricate
 * inputs without binary fixtures.
 */

import { inflateSync, deflateSync } from "node:zlib";

export interface GrayImage {
  width: number;
  height: number;
  /** row-major, values in [0, 1] */
  data: Float64Array;
}

const PNG_SIGNATURE = Buffer.from([137, 80, 78, 71, 13, 10, 26, 10]);

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

function unfilter(raw: Buffer, width: number, height: number, bpp: number): Buffer {
  const stride = width * bpp;
  const out = Buffer.alloc(stride * height);
  let pos = 0;
  for (let y = 0; y < height; y++) {
    const filter = raw[pos++];
    const row = out.subarray(y * stride, (y + 1) * stride);
    raw.copy(row, 0, pos, pos + stride);
    pos += stride;
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (let x = bpp; x < stride; x++) row[x] = (row[x] + row[x - bpp]) & 0xff;
        break;
      case 2:
        if (prev) for (let x = 0; x < stride; x++) row[x] = (row[x] + prev[x]) & 0xff;
        break;
      case 3:
        for (let x = 0; x < stride; x++) {
          const left = x >= bpp ? row[x - bpp] : 0;
          const up = prev ? prev[x] : 0;
          row[x] = (row[x] + ((left + up) >> 1)) & 0xff;
        }
        break;
      case 4:
        for (let x = 0; x < stride; x++) {
          const left = x >= bpp ? row[x - bpp] : 0;
          const up = prev ? prev[x] : 0;
          const ul = prev && x >= bpp ? prev[x - bpp] : 0;
          row[x] = (row[x] + paeth(left, up, ul)) & 0xff;
        }
        break;
      default:
        throw new Error(`unsupported PNG filter ${filter} on row ${y}`);
    }
  }
  return out;
}

/** Decode a PNG buffer to a [0, 1] grayscale plane (RGB converts by luma). */
export function decodePng(buf: Buffer): GrayImage {
  if (!buf.subarray(0, 8).equals(PNG_SIGNATURE)) {
    throw new Error("not a PNG file (bad signature)");
  }
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Buffer[] = [];
  while (pos < buf.length) {
    const length = buf.readUInt32BE(pos);
    const kind = buf.toString("ascii", pos + 4, pos + 8);
    const body = buf.subarray(pos + 8, pos + 8 + length);
    pos += 12 + length;
    if (kind === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      bitDepth = body[8];
      colorType = body[9];
      if (body[12] !== 0) throw new Error("interlaced PNG not supported");
    } else if (kind === "IDAT") {
      idat.push(body);
    } else if (kind === "IEND") {
      break;
    }
  }
  if (!width || !height) throw new Error("missing IHDR");
  const channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[colorType as 0 | 2 | 4 | 6];
  if (channels === undefined) throw new Error(`unsupported PNG color type ${colorType}`);
  if (bitDepth !== 8 && bitDepth !== 16) throw new Error(`unsupported bit depth ${bitDepth}`);
  if (bitDepth === 16 && colorType !== 0) throw new Error("16-bit PNGs must be grayscale here");
  const bpp = channels * (bitDepth / 8);
  const raw = unfilter(inflateSync(Buffer.concat(idat)), width, height, bpp);
  const data = new Float64Array(width * height);
  const maxVal = bitDepth === 16 ? 65535 : 255;
  for (let i = 0; i < width * height; i++) {
    let v: number;
    if (bitDepth === 16) {
      v = raw.readUInt16BE(i * 2);
    } else if (channels === 1) {
      v = raw[i];
    } else {
      const o = i * channels;
      // integer luma; alpha (if any) is ignored
      v = Math.round(0.299 * raw[o] + 0.587 * raw[o + 1] + 0.114 * raw[o + 2]);
    }
    data[i] = v / maxVal;
  }
  return { width, height, data };
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(...parts: Buffer[]): number {
  let crc = 0xffffffff;
  for (const part of parts) {
    for (const byte of part) crc = CRC_TABLE[(crc ^ byte) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function chunk(kind: string, body: Buffer): Buffer {
  const head = Buffer.alloc(4);
  head.writeUInt32BE(body.length);
  const tag = Buffer.from(kind, "ascii");
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(tag, body));
  return Buffer.concat([head, tag, body, crc]);
}

/** Encode an 8-bit PNG; samples is row-major with `channels` interleaved. */
export function encodePng(
  width: number,
  height: number,
  channels: 1 | 3,
  samples: Uint8Array
): Buffer {
  if (samples.length !== width * height * channels) {
    throw new Error("sample buffer does not match dimensions");
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr[8] = 8;
  ihdr[9] = channels === 1 ? 0 : 2;
  const stride = width * channels;
  const raw = Buffer.alloc((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0; // filter: none
    raw.set(samples.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  return Buffer.concat([
    PNG_SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", deflateSync(raw)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}
