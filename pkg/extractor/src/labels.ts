/**
 * Label-embedding export: unit-normalized rows plus the model's
 * similarity temperature, written in bundle format.
 */

import { SyntheticEncoder, getAdapter } from './adapters.js';
import type { Bundle, Tensor } from './txrb.js';
import { f32Tensor } from './txrb.js';

export const DEFAULT_TEMPLATE = 'a photo of a {}';

export function embedLabelRows(
  encoder: SyntheticEncoder,
  names: string[],
  template: string = DEFAULT_TEMPLATE,
): Tensor {
  if (names.length === 0) throw new Error('label name list is empty');
  const d = encoder.spec.embedDim;
  const rows = new Float32Array(names.length * d);
  names.forEach((name, i) => {
    const prompt = template.includes('{}') ? template.replace('{}', name) : `${template} ${name}`;
    rows.set(Float32Array.from(encoder.embedText(prompt)), i * d);
  });
  return f32Tensor([names.length, d], rows);
}

export function embedLabels(
  modelId: string,
  names: string[],
  template: string = DEFAULT_TEMPLATE,
): Bundle {
  const spec = getAdapter(modelId);
  const encoder = new SyntheticEncoder(spec);
  const labels = embedLabelRows(encoder, names, template);
  return {
    modelId: spec.modelId,
    imageSize: [1, 1],
    embedDim: spec.embedDim,
    fullGrid: [1, 1],
    cropLayout: null,
    cropGrid: null,
    fusionWeight: 1.0,
    temperature: spec.temperature,
    tensors: new Map([['labels', labels]]),
    labelNames: [...names],
    head: null,
    extra: { prompt_templates: [template] },
  };
}
