/**
 * Mask proposal export.  Stands in for a promptable mask model: seeds a
 * point grid, grows a colour-similarity soft mask per seed, filters by
 * predicted-quality and stability proxies, box-NMS-es duplicates, then
 * merges high-overlap survivors (element-wise maximum) before writing.
 */

import type { RgbImage } from './image.js';
import { boxIou, mergeMasks, supportBox } from './geometry.js';
import type { MaskSetData } from './txrm.js';

export interface SamParams {
  pointsPerSide: number;
  predIouThresh: number;
  stabilityScoreThresh: number;
  boxNmsThresh: number;
}

export const DEFAULT_PARAMS: SamParams = {
  pointsPerSide: 16,
  predIouThresh: 0.6,
  stabilityScoreThresh: 0.6,
  boxNmsThresh: 0.9,
};

/** High-resolution street scenes: denser seeding for small objects. */
export const STREET_SCENE_PARAMS: SamParams = { ...DEFAULT_PARAMS, pointsPerSide: 36 };

const COLOR_DISTANCE_SCALE = 120; // 8-bit euclidean distance of zero affinity

interface Proposal {
  soft: Float64Array;
  predIou: number;
  stability: number;
  seedIndex: number;
}

function fractionAtOrAbove(soft: Float64Array, threshold: number): number {
  let count = 0;
  for (const v of soft) if (v >= threshold) count++;
  return count;
}

function proposalFromSeed(image: RgbImage, seedX: number, seedY: number, index: number): Proposal {
  const { width, height, data } = image;
  const at = (seedY * width + seedX) * 3;
  const sr = data[at];
  const sg = data[at + 1];
  const sb = data[at + 2];
  const soft = new Float64Array(width * height);
  for (let p = 0; p < soft.length; p++) {
    const dr = data[p * 3] - sr;
    const dg = data[p * 3 + 1] - sg;
    const db = data[p * 3 + 2] - sb;
    const dist = Math.sqrt(dr * dr + dg * dg + db * db);
    // clamp to [0, 1]: affinity fades linearly with colour distance
    soft[p] = Math.max(0, Math.min(1, 1 - dist / COLOR_DISTANCE_SCALE));
  }
  const mid = fractionAtOrAbove(soft, 0.5);
  const loose = fractionAtOrAbove(soft, 0.25);
  const tight = fractionAtOrAbove(soft, 0.7);
  const wide = fractionAtOrAbove(soft, 0.3);
  return {
    soft,
    predIou: loose === 0 ? 0 : mid / loose,
    stability: wide === 0 ? 0 : tight / wide,
    seedIndex: index,
  };
}

export function generateMasks(
  image: RgbImage,
  params: SamParams = DEFAULT_PARAMS,
  mergeIou = 0.8,
): MaskSetData {
  for (const key of ['predIouThresh', 'stabilityScoreThresh', 'boxNmsThresh'] as const) {
    if (params[key] < 0 || params[key] > 1) {
      throw new Error(`${key} must lie in [0, 1], got ${params[key]}`);
    }
  }
  const { width, height } = image;
  const n = params.pointsPerSide;
  const proposals: Proposal[] = [];
  let index = 0;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const seedY = Math.min(height - 1, Math.floor(((i + 0.5) * height) / n));
      const seedX = Math.min(width - 1, Math.floor(((j + 0.5) * width) / n));
      const proposal = proposalFromSeed(image, seedX, seedY, index++);
      if (fractionAtOrAbove(proposal.soft, 0.5) === 0) continue;
      if (proposal.predIou < params.predIouThresh) continue;
      if (proposal.stability < params.stabilityScoreThresh) continue;
      proposals.push(proposal);
    }
  }

  proposals.sort((a, b) => b.predIou - a.predIou || a.seedIndex - b.seedIndex);
  const keptBoxes: ReturnType<typeof supportBox>[] = [];
  const kept: Float64Array[] = [];
  for (const proposal of proposals) {
    const support = Uint8Array.from(proposal.soft, (v) => (v >= 0.5 ? 1 : 0));
    const box = supportBox(support, width);
    if (!box) continue;
    let duplicate = false;
    for (const other of keptBoxes) {
      if (other && boxIou(box, other) > params.boxNmsThresh) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) continue;
    keptBoxes.push(box);
    kept.push(proposal.soft);
  }

  const merged = mergeMasks(kept, mergeIou);
  if (merged.length === 0) {
    console.warn('mask generation produced zero masks; writing an empty mask set');
  }
  return {
    imageSize: [height, width],
    regions: merged.map((soft, regionId) => ({ regionId, values: soft })),
    generator: {
      generator: 'synthetic-color-flood',
      params: {
        'points-per-side': params.pointsPerSide,
        'pred-iou-thresh': params.predIouThresh,
        'stability-score-thresh': params.stabilityScoreThresh,
        'box-nms-thresh': params.boxNmsThresh,
      },
      'merge-iou': mergeIou,
    },
  };
}
