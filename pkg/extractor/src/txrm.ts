/**
 * Mask-set (.txrm) writer and reader.
 *
 * Layout: magic "TXRM" | u32 LE version=1 | u64 LE header length |
 * UTF-8 JSON header (image size, region count, generator metadata,
 * per-region RLE runs plus offset/length of the quantized payload) |
 * concatenated u8 soft payloads.  Soft values quantize to u8
 * (dequantize as value/255); RLE runs alternate background/foreground
 * in row-major order, background first.
 */

import { writeFileSync, renameSync } from 'node:fs';
import { canonicalJson, FORMAT_VERSION } from './txrb.js';

export const MASKSET_MAGIC = 'TXRM';

export interface SoftRegion {
  regionId: number;
  /** Row-major soft values in [0, 1], length H*W. */
  values: Float64Array | Float32Array;
  /** Binary support; defaults to values >= 0.5. */
  support?: Uint8Array;
}

export interface MaskSetData {
  imageSize: [number, number]; // (H, W)
  regions: SoftRegion[];
  generator: Record<string, unknown>;
}

export function rleEncode(flat: Uint8Array): number[] {
  const runs: number[] = [];
  let current = 0;
  let run = 0;
  for (let i = 0; i < flat.length; i++) {
    const value = flat[i] ? 1 : 0;
    if (value === current) {
      run++;
    } else {
      runs.push(run);
      current = 1 - current;
      run = 1;
    }
  }
  runs.push(run);
  return runs;
}

export function rleDecode(runs: number[], total: number): Uint8Array {
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of runs) {
    if (run < 0 || pos + run > total) throw new Error('RLE runs exceed pixel count');
    if (value === 1) out.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  if (pos !== total) throw new Error(`RLE run total ${pos} != pixel count ${total}`);
  return out;
}

export function quantizeSoft(values: Float64Array | Float32Array): Uint8Array {
  const out = new Uint8Array(values.length);
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    if (v < 0 || v > 1) throw new Error(`soft value ${v} outside [0, 1]`);
    out[i] = Math.round(v * 255);
  }
  return out;
}

export function writeMaskSet(maskSet: MaskSetData): Buffer {
  const [height, width] = maskSet.imageSize;
  const total = height * width;
  const regionMeta: unknown[] = [];
  const payloads: Buffer[] = [];
  let offset = 0;
  for (const region of maskSet.regions) {
    if (region.values.length !== total) {
      throw new Error(
        `region ${region.regionId}: ${region.values.length} values for ${total} pixels`,
      );
    }
    const support =
      region.support ??
      Uint8Array.from(region.values, (v) => (v >= 0.5 ? 1 : 0));
    regionMeta.push({
      region_id: region.regionId,
      rle: rleEncode(support),
      offset,
      length: total,
    });
    payloads.push(Buffer.from(quantizeSoft(region.values)));
    offset += total;
  }
  const header = Buffer.from(
    canonicalJson({
      image_size: [height, width],
      region_count: maskSet.regions.length,
      generator: maskSet.generator,
      regions: regionMeta,
    }),
    'utf-8',
  );
  const fixed = Buffer.allocUnsafe(16);
  fixed.write(MASKSET_MAGIC, 0, 'ascii');
  fixed.writeUInt32LE(FORMAT_VERSION, 4);
  fixed.writeBigUInt64LE(BigInt(header.length), 8);
  return Buffer.concat([fixed, header, ...payloads]);
}

export function writeMaskSetFile(maskSet: MaskSetData, path: string): number {
  const data = writeMaskSet(maskSet);
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, data);
  renameSync(tmp, path);
  return data.length;
}

export function readMaskSet(raw: Buffer): MaskSetData & { supports: Uint8Array[] } {
  if (raw.toString('ascii', 0, 4) !== MASKSET_MAGIC) throw new Error('bad magic');
  if (raw.readUInt32LE(4) !== FORMAT_VERSION) throw new Error('unsupported version');
  const headerLen = Number(raw.readBigUInt64LE(8));
  const header = JSON.parse(raw.toString('utf-8', 16, 16 + headerLen));
  const [height, width] = header.image_size;
  const total = height * width;
  const base = 16 + headerLen;
  const regions: SoftRegion[] = [];
  const supports: Uint8Array[] = [];
  for (const meta of header.regions) {
    const bytes = raw.subarray(base + meta.offset, base + meta.offset + meta.length);
    if (bytes.length !== total) throw new Error('quantized payload length mismatch');
    const values = Float32Array.from(bytes, (b) => b / 255);
    regions.push({ regionId: meta.region_id, values });
    supports.push(rleDecode(meta.rle, total));
  }
  return { imageSize: [height, width], regions, generator: header.generator, supports };
}
