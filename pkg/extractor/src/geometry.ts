/**
 * Crop tiling and binary mask geometry shared by the exporters.
 */

import type { CropLayout } from './txrb.js';

/**
 * Crop counts are the rounded (half-up) ratio of each image extent to
 * the crop size, clamped to at least 1; the image is resized to the
 * exact multiple before tiling.
 */
export function planCrops(height: number, width: number, cropPx: number): CropLayout {
  if (height <= 0 || width <= 0 || cropPx <= 0) {
    throw new Error(`image size and crop size must be positive (${height}x${width}, ${cropPx})`);
  }
  const gy = Math.max(1, Math.floor(height / cropPx + 0.5));
  const gx = Math.max(1, Math.floor(width / cropPx + 0.5));
  return { grid: [gy, gx], cropPx, resizedImage: [gy * cropPx, gx * cropPx] };
}

export interface BinaryBox {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function supportBox(support: Uint8Array, width: number): BinaryBox | null {
  let x0 = Infinity;
  let y0 = Infinity;
  let x1 = -Infinity;
  let y1 = -Infinity;
  for (let i = 0; i < support.length; i++) {
    if (!support[i]) continue;
    const y = Math.floor(i / width);
    const x = i % width;
    if (x < x0) x0 = x;
    if (x > x1) x1 = x;
    if (y < y0) y0 = y;
    if (y > y1) y1 = y;
  }
  return x1 < 0 ? null : { x0, y0, x1, y1 };
}

export function boxIou(a: BinaryBox, b: BinaryBox): number {
  const ix = Math.min(a.x1, b.x1) - Math.max(a.x0, b.x0) + 1;
  const iy = Math.min(a.y1, b.y1) - Math.max(a.y0, b.y0) + 1;
  if (ix <= 0 || iy <= 0) return 0;
  const inter = ix * iy;
  const areaA = (a.x1 - a.x0 + 1) * (a.y1 - a.y0 + 1);
  const areaB = (b.x1 - b.x0 + 1) * (b.y1 - b.y0 + 1);
  return inter / (areaA + areaB - inter);
}

/** Binary IoU over supports thresholded at 0.5; both empty -> 1. */
export function maskIou(a: Float64Array, b: Float64Array): number {
  let inter = 0;
  let union = 0;
  for (let i = 0; i < a.length; i++) {
    const va = a[i] >= 0.5;
    const vb = b[i] >= 0.5;
    if (va && vb) inter++;
    if (va || vb) union++;
  }
  return union === 0 ? 1 : inter / union;
}

/**
 * Greedy overlap merging in input order: a mask whose binary IoU with
 * an already-kept mask exceeds the threshold is absorbed into the
 * first such mask by element-wise maximum.
 */
export function mergeMasks(masks: Float64Array[], iouThreshold: number): Float64Array[] {
  const kept: Float64Array[] = [];
  for (const mask of masks) {
    let target = -1;
    for (let k = 0; k < kept.length; k++) {
      if (maskIou(kept[k], mask) > iouThreshold) {
        target = k;
        break;
      }
    }
    if (target < 0) {
      kept.push(Float64Array.from(mask));
    } else {
      const merged = kept[target];
      for (let i = 0; i < merged.length; i++) merged[i] = Math.max(merged[i], mask[i]);
    }
  }
  return kept;
}
