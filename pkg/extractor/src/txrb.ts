/**
 * Feature-bundle (.txrb) writer and reader.
 *
 * Layout: magic "TXRB" | u32 LE version=1 | u64 LE header length |
 * UTF-8 JSON header (metadata + tensor record table) | zero padding to
 * a 64-byte file boundary (only when tensors exist) | tensor payloads
 * at their declared 64-aligned offsets, sorted by name.
 */

import { writeFileSync, renameSync } from 'node:fs';

export const BUNDLE_MAGIC = 'TXRB';
export const FORMAT_VERSION = 1;
const ALIGN = 64;
const HEAD_PREFIX = '__head__';

export type Dtype = 'f32' | 'f16' | 'u8';
const DTYPE_WIDTH: Record<Dtype, number> = { f32: 4, f16: 2, u8: 1 };

export interface Tensor {
  dtype: Dtype;
  shape: number[];
  /** Row-major payload; Float32Array for f32, Uint8Array otherwise. */
  data: Float32Array | Uint8Array;
}

export function f32Tensor(shape: number[], data: Float32Array | number[]): Tensor {
  const arr = data instanceof Float32Array ? data : Float32Array.from(data);
  const count = shape.reduce((a, b) => a * b, 1);
  if (arr.length !== count) throw new Error(`tensor data length ${arr.length} != ${count}`);
  return { dtype: 'f32', shape, data: arr };
}

export interface CropLayout {
  grid: [number, number]; // (gy, gx)
  cropPx: number;
  resizedImage: [number, number];
}

export type HeadLayer =
  | { kind: 'linear'; weight: Tensor; bias: Tensor }
  | { kind: 'layer_norm'; scale: Tensor; shift: Tensor; epsilon: number }
  | {
      kind: 'residual_mlp';
      w1: Tensor;
      b1: Tensor;
      w2: Tensor;
      b2: Tensor;
      activation: 'gelu_tanh' | 'gelu_exact';
    };

export interface Bundle {
  modelId: string;
  imageSize: [number, number]; // (H, W)
  embedDim: number;
  fullGrid: [number, number]; // (h0, w0)
  cropLayout: CropLayout | null;
  cropGrid: [number, number] | null;
  fusionWeight: number;
  temperature: number;
  tensors: Map<string, Tensor>;
  labelNames: string[] | null;
  head: { enabled: boolean; layers: HeadLayer[] } | null;
  extra: Record<string, unknown>;
}

/** JSON with recursively sorted keys and compact separators. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== 'object') return JSON.stringify(value);
  if (Array.isArray(value)) return `[${value.map(canonicalJson).join(',')}]`;
  const entries = Object.keys(value as Record<string, unknown>)
    .sort()
    .map((key) => `${JSON.stringify(key)}:${canonicalJson((value as Record<string, unknown>)[key])}`);
  return `{${entries.join(',')}}`;
}

function alignUp(n: number): number {
  return Math.ceil(n / ALIGN) * ALIGN;
}

function tensorBytes(tensor: Tensor): Buffer {
  if (tensor.dtype === 'f32') {
    const arr = tensor.data as Float32Array;
    const buf = Buffer.allocUnsafe(arr.length * 4);
    for (let i = 0; i < arr.length; i++) buf.writeFloatLE(arr[i], i * 4);
    return buf;
  }
  return Buffer.from(tensor.data as Uint8Array);
}

function headTensorEntries(head: Bundle['head']): Map<string, Tensor> {
  const entries = new Map<string, Tensor>();
  if (!head) return entries;
  head.layers.forEach((layer, i) => {
    const fields: Record<string, Tensor> =
      layer.kind === 'linear'
        ? { weight: layer.weight, bias: layer.bias }
        : layer.kind === 'layer_norm'
          ? { scale: layer.scale, shift: layer.shift }
          : { w1: layer.w1, b1: layer.b1, w2: layer.w2, b2: layer.b2 };
    for (const [name, tensor] of Object.entries(fields)) {
      entries.set(`${HEAD_PREFIX}.${i}.${name}`, tensor);
    }
  });
  return entries;
}

function headMeta(head: Bundle['head']): unknown {
  if (!head) return null;
  return {
    enabled: head.enabled,
    layers: head.layers.map((layer, i) => {
      const tensorNames: Record<string, string> = {};
      const meta: Record<string, unknown> = { kind: layer.kind, tensors: tensorNames };
      if (layer.kind === 'linear') {
        tensorNames.weight = `${HEAD_PREFIX}.${i}.weight`;
        tensorNames.bias = `${HEAD_PREFIX}.${i}.bias`;
      } else if (layer.kind === 'layer_norm') {
        tensorNames.scale = `${HEAD_PREFIX}.${i}.scale`;
        tensorNames.shift = `${HEAD_PREFIX}.${i}.shift`;
        meta.epsilon = layer.epsilon;
      } else {
        for (const f of ['w1', 'b1', 'w2', 'b2'] as const) {
          tensorNames[f] = `${HEAD_PREFIX}.${i}.${f}`;
        }
        meta.activation = layer.activation;
      }
      return meta;
    }),
  };
}

export function writeBundle(bundle: Bundle): Buffer {
  const entries = new Map(bundle.tensors);
  for (const name of entries.keys()) {
    if (name.startsWith(HEAD_PREFIX)) {
      throw new Error(`tensor name ${name} uses the reserved head prefix`);
    }
  }
  for (const [name, tensor] of headTensorEntries(bundle.head)) entries.set(name, tensor);

  const names = [...entries.keys()].sort();
  const records: unknown[] = [];
  let offset = 0;
  const payloads: { offset: number; bytes: Buffer }[] = [];
  for (const name of names) {
    const tensor = entries.get(name)!;
    const count = tensor.shape.reduce((a, b) => a * b, 1);
    const length = count * DTYPE_WIDTH[tensor.dtype];
    records.push({ name, dtype: tensor.dtype, shape: tensor.shape, offset, length });
    payloads.push({ offset, bytes: tensorBytes(tensor) });
    offset = alignUp(offset + length);
  }

  const header = Buffer.from(
    canonicalJson({
      model_id: bundle.modelId,
      image_size: bundle.imageSize,
      embed_dim: bundle.embedDim,
      full_grid: bundle.fullGrid,
      crop_layout: bundle.cropLayout
        ? {
            grid: bundle.cropLayout.grid,
            crop_px: bundle.cropLayout.cropPx,
            resized_image: bundle.cropLayout.resizedImage,
          }
        : null,
      crop_grid: bundle.cropGrid,
      fusion_weight: bundle.fusionWeight,
      temperature: bundle.temperature,
      label_names: bundle.labelNames,
      extra: bundle.extra,
      head: headMeta(bundle.head),
      tensors: records,
    }),
    'utf-8',
  );

  const fixed = Buffer.allocUnsafe(16);
  fixed.write(BUNDLE_MAGIC, 0, 'ascii');
  fixed.writeUInt32LE(FORMAT_VERSION, 4);
  fixed.writeBigUInt64LE(BigInt(header.length), 8);

  const parts: Uint8Array[] = [fixed, header];
  if (names.length > 0) {
    const headerEnd = 16 + header.length;
    const base = alignUp(headerEnd);
    parts.push(Buffer.alloc(base - headerEnd));
    let cursor = base;
    for (const { offset: recordOffset, bytes } of payloads) {
      const start = base + recordOffset;
      if (start > cursor) parts.push(Buffer.alloc(start - cursor));
      parts.push(bytes);
      cursor = start + bytes.length;
    }
  }
  return Buffer.concat(parts);
}

/** Write through a temp file and rename, so readers never see a torn file. */
export function writeBundleFile(bundle: Bundle, path: string): number {
  const data = writeBundle(bundle);
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, data);
  renameSync(tmp, path);
  return data.length;
}

export function readBundle(raw: Buffer): Bundle {
  if (raw.toString('ascii', 0, 4) !== BUNDLE_MAGIC) throw new Error('bad magic');
  if (raw.readUInt32LE(4) !== FORMAT_VERSION) throw new Error('unsupported version');
  const headerLen = Number(raw.readBigUInt64LE(8));
  const header = JSON.parse(raw.toString('utf-8', 16, 16 + headerLen));
  const records: { name: string; dtype: Dtype; shape: number[]; offset: number; length: number }[] =
    header.tensors;
  const base = records.length ? alignUp(16 + headerLen) : 16 + headerLen;
  const arrays = new Map<string, Tensor>();
  for (const record of records) {
    const start = base + record.offset;
    const bytes = raw.subarray(start, start + record.length);
    let data: Float32Array | Uint8Array;
    if (record.dtype === 'f32') {
      const arr = new Float32Array(record.length / 4);
      for (let i = 0; i < arr.length; i++) arr[i] = bytes.readFloatLE(i * 4);
      data = arr;
    } else if (record.dtype === 'u8') {
      data = new Uint8Array(bytes);
    } else {
      throw new Error('f16 read not supported by this exporter');
    }
    arrays.set(record.name, { dtype: record.dtype, shape: record.shape, data });
  }

  let head: Bundle['head'] = null;
  if (header.head) {
    const layers: HeadLayer[] = header.head.layers.map(
      (meta: { kind: string; tensors: Record<string, string>; epsilon?: number; activation?: string }) => {
        const grab = (field: string) => arrays.get(meta.tensors[field])!;
        if (meta.kind === 'linear') return { kind: 'linear', weight: grab('weight'), bias: grab('bias') };
        if (meta.kind === 'layer_norm') {
          return { kind: 'layer_norm', scale: grab('scale'), shift: grab('shift'), epsilon: meta.epsilon! };
        }
        return {
          kind: 'residual_mlp',
          w1: grab('w1'),
          b1: grab('b1'),
          w2: grab('w2'),
          b2: grab('b2'),
          activation: meta.activation as 'gelu_tanh' | 'gelu_exact',
        };
      },
    );
    head = { enabled: header.head.enabled, layers };
  }

  const tensors = new Map<string, Tensor>();
  for (const [name, tensor] of arrays) {
    if (!name.startsWith(HEAD_PREFIX)) tensors.set(name, tensor);
  }
  return {
    modelId: header.model_id,
    imageSize: header.image_size,
    embedDim: header.embed_dim,
    fullGrid: header.full_grid,
    cropLayout: header.crop_layout
      ? {
          grid: header.crop_layout.grid,
          cropPx: header.crop_layout.crop_px,
          resizedImage: header.crop_layout.resized_image,
        }
      : null,
    cropGrid: header.crop_grid,
    fusionWeight: header.fusion_weight,
    temperature: header.temperature,
    tensors,
    labelNames: header.label_names,
    head,
    extra: header.extra ?? {},
  };
}
