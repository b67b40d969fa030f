/** Small float-plane helpers: separable Gaussian blur, gradients, stats. */

import type { GrayImage } from "./png.js";

export function gaussianKernel(sigma: number): Float64Array {
  const radius = Math.max(1, Math.ceil(3 * sigma));
  const k = new Float64Array(2 * radius + 1);
  let sum = 0;
  for (let i = -radius; i <= radius; i++) {
    const v = Math.exp(-(i * i) / (2 * sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (let i = 0; i < k.length; i++) k[i] /= sum;
  return k;
}

/** Separable Gaussian blur with edge clamping. */
export function gaussianBlur(img: GrayImage, sigma: number): GrayImage {
  if (sigma <= 0) return { ...img, data: img.data.slice() };
  const { width, height, data } = img;
  const k = gaussianKernel(sigma);
  const radius = (k.length - 1) / 2;
  const tmp = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let acc = 0;
      for (let t = -radius; t <= radius; t++) {
        const xx = Math.min(Math.max(x + t, 0), width - 1);
        acc += k[t + radius] * data[y * width + xx];
      }
      tmp[y * width + x] = acc;
    }
  }
  const out = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let acc = 0;
      for (let t = -radius; t <= radius; t++) {
        const yy = Math.min(Math.max(y + t, 0), height - 1);
        acc += k[t + radius] * tmp[yy * width + x];
      }
      out[y * width + x] = acc;
    }
  }
  return { width, height, data: out };
}

export function subtract(a: GrayImage, b: GrayImage): GrayImage {
  const data = new Float64Array(a.data.length);
  for (let i = 0; i < data.length; i++) data[i] = a.data[i] - b.data[i];
  return { width: a.width, height: a.height, data };
}

/** Central-difference gradient magnitude. */
export function gradientMagnitude(img: GrayImage): GrayImage {
  const { width, height, data } = img;
  const out = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const xl = Math.max(x - 1, 0);
      const xr = Math.min(x + 1, width - 1);
      const yu = Math.max(y - 1, 0);
      const yd = Math.min(y + 1, height - 1);
      const gx = (data[y * width + xr] - data[y * width + xl]) / 2;
      const gy = (data[yd * width + x] - data[yu * width + x]) / 2;
      out[y * width + x] = Math.hypot(gx, gy);
    }
  }
  return { width, height, data: out };
}

export function meanStd(data: Float64Array): { mean: number; std: number } {
  let sum = 0;
  for (let i = 0; i < data.length; i++) sum += data[i];
  const mean = sum / data.length;
  let varsum = 0;
  for (let i = 0; i < data.length; i++) {
    const d = data[i] - mean;
    varsum += d * d;
  }
  return { mean, std: Math.sqrt(varsum / data.length) };
}
