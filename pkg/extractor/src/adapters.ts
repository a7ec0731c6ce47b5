/**
 * Model adapters: the boundary behind which encoder weights live.
 *
 * Real checkpoints are not reachable in this environment, so the
 * registry ships deterministic synthetic encoders that honour the same
 * export contract: final-block value features with every token-wise
 * post-pooling transform pre-applied (cls_attention style), or
 * head-value-projected features plus the post-pool layers as a HeadSpec
 * (delegate_query style).  The synthetic "modality" is colour: patches
 * embed their mean RGB and the text side embeds colour words through
 * the identical projection stack, so region tokens genuinely align with
 * label embeddings end to end.
 */

import type { RgbImage } from './image.js';
import { Rng, hashString } from './rng.js';
import type { HeadLayer } from './txrb.js';
import { f32Tensor } from './txrb.js';

export type PoolingStyle = 'cls_attention' | 'delegate_query';

export interface ModelAdapterSpec {
  modelId: string;
  patchPx: number;
  nativePx: number;
  poolingStyle: PoolingStyle;
  embedDim: number;
  temperature: number;
  exportPolicy: string;
}

const REGISTRY: Record<string, ModelAdapterSpec> = {
  'synthetic-clip-b16': {
    modelId: 'synthetic-clip-b16',
    patchPx: 16,
    nativePx: 224,
    poolingStyle: 'cls_attention',
    embedDim: 32,
    temperature: 100.0,
    exportPolicy: 'values carry out-projection and joint projection pre-applied per token',
  },
  'synthetic-clip-l14': {
    modelId: 'synthetic-clip-l14',
    patchPx: 14,
    nativePx: 336,
    poolingStyle: 'cls_attention',
    embedDim: 48,
    temperature: 100.0,
    exportPolicy: 'values carry out-projection and joint projection pre-applied per token',
  },
  'synthetic-siglip-b16': {
    modelId: 'synthetic-siglip-b16',
    patchPx: 16,
    nativePx: 224,
    poolingStyle: 'delegate_query',
    embedDim: 32,
    temperature: 64.0,
    exportPolicy:
      'head-value-projected patch features; post-pool projection shipped as a HeadSpec; averaged-key variant',
  },
};

export function getAdapter(modelId: string): ModelAdapterSpec {
  const spec = REGISTRY[modelId];
  if (!spec) {
    throw new Error(
      `no checkpoint for model ${modelId}; available: ${Object.keys(REGISTRY).join(', ')}`,
    );
  }
  if (spec.nativePx % spec.patchPx !== 0) {
    throw new Error(`adapter ${modelId}: native ${spec.nativePx} not divisible by patch ${spec.patchPx}`);
  }
  return spec;
}

export function listAdapters(): string[] {
  return Object.keys(REGISTRY);
}

const COLOR_WORDS: Record<string, [number, number, number]> = {
  red: [1, 0, 0],
  green: [0, 1, 0],
  blue: [0, 0, 1],
  yellow: [1, 1, 0],
  cyan: [0, 1, 1],
  magenta: [1, 0, 1],
  white: [1, 1, 1],
  black: [0, 0, 0],
  gray: [0.5, 0.5, 0.5],
  grey: [0.5, 0.5, 0.5],
  orange: [1, 0.5, 0],
  purple: [0.5, 0, 0.5],
  brown: [0.55, 0.27, 0.07],
  pink: [1, 0.75, 0.8],
};

export interface EncodedView {
  grid: [number, number]; // (h, w)
  /** Exported per-patch values, ready for mask-weighted pooling. */
  values: Float64Array; // (h*w, d) row-major
  /** Final-block input tokens, the similarity-check substrate. */
  simfeat: Float64Array; // (h*w, d)
}

function matVec(matrix: Float64Array, rows: number, cols: number, vec: Float64Array): Float64Array {
  const out = new Float64Array(rows);
  for (let r = 0; r < rows; r++) {
    let acc = 0;
    for (let c = 0; c < cols; c++) acc += matrix[r * cols + c] * vec[c];
    out[r] = acc;
  }
  return out;
}

export class SyntheticEncoder {
  readonly spec: ModelAdapterSpec;
  private readonly wIn: Float64Array; // (d, 4) block-input projection
  private readonly wValue: Float64Array; // (d, d) value projection
  private readonly wOut: Float64Array; // (d, d) attention out-projection (cls path)
  private readonly wJoint: Float64Array; // (d, d) joint-space projection (cls path)
  private readonly wHeadValue: Float64Array; // (d, d) pooling-head value projection (delegate)
  private readonly wPostPool: Float64Array; // (d, d) post-pool projection (delegate)

  constructor(spec: ModelAdapterSpec) {
    this.spec = spec;
    const d = spec.embedDim;
    const scale = (fanIn: number) => 1 / Math.sqrt(fanIn);
    const draw = (tag: string, rows: number, cols: number) => {
      const m = new Rng(`${spec.modelId}/${tag}`).gaussianMatrix(rows, cols);
      const s = scale(cols);
      for (let i = 0; i < m.length; i++) m[i] *= s;
      return m;
    };
    this.wIn = draw('input', d, 4);
    this.wValue = draw('value', d, d);
    this.wOut = draw('out', d, d);
    this.wJoint = draw('joint', d, d);
    this.wHeadValue = draw('head-value', d, d);
    this.wPostPool = draw('post-pool', d, d);
  }

  /** Patch grid for a view; errors when the resolution does not tile. */
  gridFor(height: number, width: number): [number, number] {
    const p = this.spec.patchPx;
    if (height % p !== 0 || width % p !== 0) {
      throw new Error(`resolution ${height}x${width} not divisible by patch size ${p}`);
    }
    return [height / p, width / p];
  }

  encodeView(image: RgbImage): EncodedView {
    const [gridH, gridW] = this.gridFor(image.height, image.width);
    const d = this.spec.embedDim;
    const p = this.spec.patchPx;
    const values = new Float64Array(gridH * gridW * d);
    const simfeat = new Float64Array(gridH * gridW * d);
    for (let gy = 0; gy < gridH; gy++) {
      for (let gx = 0; gx < gridW; gx++) {
        let r = 0;
        let g = 0;
        let b = 0;
        for (let y = gy * p; y < (gy + 1) * p; y++) {
          for (let x = gx * p; x < (gx + 1) * p; x++) {
            const at = (y * image.width + x) * 3;
            r += image.data[at];
            g += image.data[at + 1];
            b += image.data[at + 2];
          }
        }
        const count = p * p * 255;
        const token = this.projectColor(r / count, g / count, b / count);
        const at = (gy * gridW + gx) * d;
        simfeat.set(token.blockInput, at);
        values.set(token.value, at);
      }
    }
    return { grid: [gridH, gridW], values, simfeat };
  }

  private projectColor(r: number, g: number, b: number) {
    const d = this.spec.embedDim;
    const blockInput = matVec(this.wIn, d, 4, Float64Array.from([r, g, b, 1]));
    let value: Float64Array;
    if (this.spec.poolingStyle === 'cls_attention') {
      // pre-apply out-projection + joint projection so pooled sums are
      // directly comparable to text embeddings
      value = matVec(
        this.wJoint,
        d,
        d,
        matVec(this.wOut, d, d, matVec(this.wValue, d, d, blockInput)),
      );
    } else {
      value = matVec(this.wHeadValue, d, d, blockInput);
    }
    return { blockInput, value };
  }

  /** Post-pool layers shipped with delegate bundles. */
  headLayers(): HeadLayer[] {
    const d = this.spec.embedDim;
    return [
      {
        kind: 'linear',
        weight: f32Tensor([d, d], Float32Array.from(this.wPostPool)),
        bias: f32Tensor([d], new Float32Array(d)),
      },
    ];
  }

  /** Colour grounding for the text side; unknown words hash to a hue. */
  textColor(text: string): [number, number, number] {
    const words = text.toLowerCase().split(/[^a-z]+/);
    for (const word of words) {
      const rgb = COLOR_WORDS[word];
      if (rgb) return rgb;
    }
    const h = hashString(text.toLowerCase());
    return [((h >>> 0) % 256) / 255, ((h >>> 8) % 256) / 255, ((h >>> 16) % 256) / 255];
  }

  /** Unit text embedding through the same projection stack as patches. */
  embedText(text: string): Float64Array {
    const [r, g, b] = this.textColor(text);
    const d = this.spec.embedDim;
    const blockInput = matVec(this.wIn, d, 4, Float64Array.from([r, g, b, 1]));
    let out: Float64Array;
    if (this.spec.poolingStyle === 'cls_attention') {
      out = matVec(
        this.wJoint,
        d,
        d,
        matVec(this.wOut, d, d, matVec(this.wValue, d, d, blockInput)),
      );
    } else {
      out = matVec(this.wPostPool, d, d, matVec(this.wHeadValue, d, d, blockInput));
    }
    let norm = 0;
    for (const v of out) norm += v * v;
    norm = Math.sqrt(norm);
    if (norm === 0) throw new Error(`text ${text} embedded to a zero vector`);
    for (let i = 0; i < out.length; i++) out[i] /= norm;
    return out;
  }
}
