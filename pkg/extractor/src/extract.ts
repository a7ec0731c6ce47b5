/**
 * Feature export: full view plus non-overlapping crops, assembled into
 * one bundle the engine can pool directly.
 */

import type { RgbImage } from './image.js';
import { cropImage, resizeImage } from './image.js';
import { planCrops } from './geometry.js';
import { SyntheticEncoder, getAdapter } from './adapters.js';
import type { Bundle, Tensor } from './txrb.js';
import { f32Tensor } from './txrb.js';
import { embedLabelRows } from './labels.js';

export interface ExtractOptions {
  modelId: string;
  cropPx?: number; // default 336; 0 disables the crop pass
  labelNames?: string[]; // optionally embed labels into the same bundle
  template?: string;
}

function toTensor(values: Float64Array, rows: number, dim: number): Tensor {
  return f32Tensor([rows, dim], Float32Array.from(values));
}

export function extractFeatures(image: RgbImage, options: ExtractOptions): Bundle {
  const spec = getAdapter(options.modelId);
  const encoder = new SyntheticEncoder(spec);
  const d = spec.embedDim;
  const cropPx = options.cropPx ?? 336;

  const full = encoder.encodeView(image);
  const tensors = new Map<string, Tensor>();
  const [h0, w0] = full.grid;
  tensors.set('values_full', toTensor(full.values, h0 * w0, d));
  tensors.set('simfeat_full', toTensor(full.simfeat, h0 * w0, d));

  let cropLayout: Bundle['cropLayout'] = null;
  let cropGrid: Bundle['cropGrid'] = null;
  if (cropPx > 0) {
    if (cropPx % spec.patchPx !== 0) {
      throw new Error(`resolution ${cropPx} not divisible by patch size ${spec.patchPx}`);
    }
    cropLayout = planCrops(image.height, image.width, cropPx);
    const [gy, gx] = cropLayout.grid;
    const resized = resizeImage(image, cropLayout.resizedImage[1], cropLayout.resizedImage[0]);
    const perCrop = cropPx / spec.patchPx;
    const gridH = gy * perCrop;
    const gridW = gx * perCrop;
    cropGrid = [gridH, gridW];
    const values = new Float64Array(gridH * gridW * d);
    const simfeat = new Float64Array(gridH * gridW * d);
    for (let cy = 0; cy < gy; cy++) {
      for (let cx = 0; cx < gx; cx++) {
        const view = encoder.encodeView(cropImage(resized, cx * cropPx, cy * cropPx, cropPx));
        for (let y = 0; y < perCrop; y++) {
          for (let x = 0; x < perCrop; x++) {
            const src = (y * perCrop + x) * d;
            const dst = ((cy * perCrop + y) * gridW + (cx * perCrop + x)) * d;
            values.set(view.values.subarray(src, src + d), dst);
            simfeat.set(view.simfeat.subarray(src, src + d), dst);
          }
        }
      }
    }
    tensors.set('values_crops', toTensor(values, gridH * gridW, d));
    tensors.set('simfeat_crops', toTensor(simfeat, gridH * gridW, d));
  }

  let labelNames: string[] | null = null;
  if (options.labelNames && options.labelNames.length > 0) {
    labelNames = [...options.labelNames];
    tensors.set('labels', embedLabelRows(encoder, labelNames, options.template));
  }

  const head =
    spec.poolingStyle === 'delegate_query'
      ? { enabled: true, layers: encoder.headLayers() }
      : null;

  return {
    modelId: spec.modelId,
    imageSize: [image.height, image.width],
    embedDim: d,
    fullGrid: full.grid,
    cropLayout,
    cropGrid,
    // delegate-style encoders are more sensitive to global patches, so
    // their multi-resolution fusion halves the upsampled full view
    fusionWeight: spec.poolingStyle === 'delegate_query' ? 0.5 : 1.0,
    temperature: spec.temperature,
    tensors,
    labelNames,
    head,
    extra: { export_policy: spec.exportPolicy, pooling_style: spec.poolingStyle },
  };
}
