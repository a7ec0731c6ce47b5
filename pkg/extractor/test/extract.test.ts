import { describe, expect, it } from 'vitest';

import { RgbImage } from '../src/image.js';
import { extractFeatures } from '../src/extract.js';
import { embedLabels } from '../src/labels.js';
import { generateMasks, DEFAULT_PARAMS, STREET_SCENE_PARAMS } from '../src/masks.js';
import { writeBundle } from '../src/txrb.js';
import { writeMaskSet } from '../src/txrm.js';

function flatImage(height: number, width: number, rgb: [number, number, number]): RgbImage {
  const data = new Uint8Array(height * width * 3);
  for (let p = 0; p < height * width; p++) data.set(rgb, p * 3);
  return { width, height, data };
}

function bandImage(height: number, width: number, colors: [number, number, number][]): RgbImage {
  const data = new Uint8Array(height * width * 3);
  const bandWidth = width / colors.length;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      data.set(colors[Math.min(colors.length - 1, Math.floor(x / bandWidth))], (y * width + x) * 3);
    }
  }
  return { width, height, data };
}

describe('feature extraction', () => {
  it('derives the full grid as resolution over patch size', () => {
    const bundle = extractFeatures(flatImage(672, 672, [200, 30, 30]), {
      modelId: 'synthetic-clip-b16',
      cropPx: 336,
    });
    expect(bundle.fullGrid).toEqual([42, 42]);
    expect(bundle.tensors.get('values_full')!.shape).toEqual([42 * 42, bundle.embedDim]);
    expect(bundle.cropLayout).toEqual({ grid: [2, 2], cropPx: 336, resizedImage: [672, 672] });
    expect(bundle.cropGrid).toEqual([42, 42]);
  });

  it('tiles 336px crops into 24x24 grids for patch-14 models', () => {
    const bundle = extractFeatures(flatImage(336, 336, [10, 160, 10]), {
      modelId: 'synthetic-clip-l14',
      cropPx: 336,
    });
    expect(bundle.fullGrid).toEqual([24, 24]);
    expect(bundle.cropGrid).toEqual([24, 24]);
    expect(bundle.tensors.get('simfeat_crops')!.shape).toEqual([24 * 24, bundle.embedDim]);
  });

  it('ships a non-empty head spec for delegate models', () => {
    const bundle = extractFeatures(flatImage(224, 224, [0, 0, 250]), {
      modelId: 'synthetic-siglip-b16',
      cropPx: 112,
    });
    expect(bundle.head).not.toBeNull();
    expect(bundle.head!.enabled).toBe(true);
    expect(bundle.head!.layers.length).toBeGreaterThan(0);
    expect(bundle.fusionWeight).toBe(0.5);
  });

  it('is deterministic down to the byte', () => {
    const image = bandImage(96, 96, [
      [255, 0, 0],
      [0, 255, 0],
      [0, 0, 255],
    ]);
    const run = () =>
      writeBundle(extractFeatures(image, { modelId: 'synthetic-clip-b16', cropPx: 48 }));
    expect(run().equals(run())).toBe(true);
    const masks = () => writeMaskSet(generateMasks(image));
    expect(masks().equals(masks())).toBe(true);
  });

  it('rejects resolutions that do not tile into patches', () => {
    expect(() =>
      extractFeatures(flatImage(100, 100, [9, 9, 9]), { modelId: 'synthetic-clip-b16', cropPx: 0 }),
    ).toThrow(/not divisible by patch size/);
  });

  it('rejects unknown model checkpoints', () => {
    expect(() =>
      extractFeatures(flatImage(32, 32, [9, 9, 9]), { modelId: 'clip-vit-b16', cropPx: 0 }),
    ).toThrow(/no checkpoint/);
  });
});

describe('mask generation', () => {
  const bands = bandImage(96, 96, [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
  ]);

  it('emits clamped soft values and records the parameters', () => {
    const maskSet = generateMasks(bands);
    expect(maskSet.regions.length).toBeGreaterThan(0);
    for (const region of maskSet.regions) {
      for (const v of region.values) {
        expect(v).toBeGreaterThanOrEqual(0);
        expect(v).toBeLessThanOrEqual(1);
      }
    }
    expect(maskSet.generator.params).toEqual({
      'points-per-side': 16,
      'pred-iou-thresh': 0.6,
      'stability-score-thresh': 0.6,
      'box-nms-thresh': 0.9,
    });
  });

  it('street-scene preset raises the seeding density to 36', () => {
    expect(STREET_SCENE_PARAMS['pointsPerSide']).toBe(36);
    expect(DEFAULT_PARAMS.pointsPerSide).toBe(16);
    const maskSet = generateMasks(bands, STREET_SCENE_PARAMS);
    expect(maskSet.generator.params).toMatchObject({ 'points-per-side': 36 });
  });

  it('collapses duplicate proposals of uniform regions', () => {
    const maskSet = generateMasks(bands);
    // three crisp colour bands -> one region each after NMS + merging
    expect(maskSet.regions.length).toBe(3);
  });

  it('yields a valid empty set when nothing passes the filters', () => {
    const width = 96;
    const height = 96;
    const data = new Uint8Array(width * height * 3);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const value = Math.round((x * 255) / (width - 1));
        data.set([value, value, value], (y * width + x) * 3);
      }
    }
    const maskSet = generateMasks({ width, height, data });
    expect(maskSet.regions).toHaveLength(0);
    expect(() => writeMaskSet(maskSet)).not.toThrow();
  });
});

describe('label embedding', () => {
  it('emits one unit row per name with the model temperature', () => {
    const bundle = embedLabels('synthetic-clip-b16', ['red', 'green', 'blue']);
    const labels = bundle.tensors.get('labels')!;
    expect(labels.shape).toEqual([3, bundle.embedDim]);
    expect(bundle.temperature).toBe(100.0);
    const data = labels.data as Float32Array;
    for (let r = 0; r < 3; r++) {
      let norm = 0;
      for (let c = 0; c < bundle.embedDim; c++) norm += data[r * bundle.embedDim + c] ** 2;
      expect(Math.abs(Math.sqrt(norm) - 1)).toBeLessThanOrEqual(1e-4);
    }
  });

  it('records the prompt template in the metadata', () => {
    const bundle = embedLabels('synthetic-clip-b16', ['red'], 'a photo of a {}');
    expect(bundle.extra.prompt_templates).toEqual(['a photo of a {}']);
    expect(bundle.labelNames).toEqual(['red']);
  });

  it('rejects an empty name list', () => {
    expect(() => embedLabels('synthetic-clip-b16', [])).toThrow(/empty/);
  });
});

describe('sampler parameter validation', () => {
  it('rejects thresholds outside [0, 1]', () => {
    const image = flatImage(32, 32, [10, 10, 10]);
    expect(() => generateMasks(image, { ...DEFAULT_PARAMS, predIouThresh: 1.2 })).toThrow(
      /\[0, 1\]/,
    );
  });
});
