/**
 * Minimal image input: PPM (P6) and non-interlaced 8-bit PNG, plus the
 * bilinear resize used when tiling images into crops.  Self-contained on
 * purpose: the exporter must run without any model runtime installed.
 */

import { inflateSync } from 'node:zlib';
import { readFileSync } from 'node:fs';

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples in [0, 255]. */
  data: Uint8Array;
}

export function readImage(path: string): RgbImage {
  const raw = readFileSync(path);
  if (raw.length >= 2 && raw[0] === 0x50 && raw[1] === 0x36) return decodePpm(raw);
  if (raw.length >= 8 && raw[0] === 0x89 && raw[1] === 0x50) return decodePng(raw);
  throw new Error(`${path}: not a P6 PPM or PNG image`);
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

function decodePpm(raw: Buffer): RgbImage {
  // P6 <width> <height> <maxval>\n followed by binary RGB
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < raw.length && isSpace(raw[pos])) pos++;
    if (raw[pos] === 0x23) {
      while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    while (pos < raw.length && !isSpace(raw[pos])) {
      value = value * 10 + (raw[pos] - 0x30);
      pos++;
    }
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`PPM maxval ${maxval} unsupported (need 255)`);
  const expected = width * height * 3;
  const data = new Uint8Array(raw.subarray(pos, pos + expected));
  if (data.length !== expected) throw new Error('PPM pixel data truncated');
  return { width, height, data };
}

export function writePpm(image: RgbImage): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, 'ascii');
  return Buffer.concat([header, Buffer.from(image.data)]);
}

interface PngPlanes {
  width: number;
  height: number;
  channels: number;
  colorType: number;
  pixels: Uint8Array;
  palette: Uint8Array | null;
}

function parsePng(raw: Buffer): PngPlanes {
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Buffer[] = [];
  let palette: Uint8Array | null = null;
  while (pos < raw.length) {
    const length = raw.readUInt32BE(pos);
    const kind = raw.toString('ascii', pos + 4, pos + 8);
    const body = raw.subarray(pos + 8, pos + 8 + length);
    if (kind === 'IHDR') {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      bitDepth = body[8];
      colorType = body[9];
      if (bitDepth !== 8) throw new Error(`PNG bit depth ${bitDepth} unsupported`);
      if (body[12] !== 0) throw new Error('interlaced PNG unsupported');
    } else if (kind === 'PLTE') {
      palette = new Uint8Array(body);
    } else if (kind === 'IDAT') {
      idat.push(Buffer.from(body));
    } else if (kind === 'IEND') {
      break;
    }
    pos += 12 + length;
  }
  const channels = { 0: 1, 2: 3, 3: 1, 4: 2, 6: 4 }[colorType];
  if (channels === undefined) throw new Error(`PNG color type ${colorType} unsupported`);
  const decompressed = inflateSync(Buffer.concat(idat));
  const stride = width * channels;
  const pixels = new Uint8Array(width * height * channels);
  let prev = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const filter = decompressed[y * (stride + 1)];
    const line = decompressed.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const row = pixels.subarray(y * stride, (y + 1) * stride);
    unfilterRow(filter, line, row, prev, channels);
    prev = row;
  }
  return { width, height, channels, colorType, pixels, palette };
}

function decodePng(raw: Buffer): RgbImage {
  const { width, height, channels, colorType, pixels, palette } = parsePng(raw);
  const data = new Uint8Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    if (colorType === 3) {
      if (!palette) throw new Error('paletted PNG without PLTE');
      const idx = pixels[p] * 3;
      data[p * 3] = palette[idx];
      data[p * 3 + 1] = palette[idx + 1];
      data[p * 3 + 2] = palette[idx + 2];
    } else if (channels >= 3) {
      data[p * 3] = pixels[p * channels];
      data[p * 3 + 1] = pixels[p * channels + 1];
      data[p * 3 + 2] = pixels[p * channels + 2];
    } else {
      const g = pixels[p * channels];
      data[p * 3] = g;
      data[p * 3 + 1] = g;
      data[p * 3 + 2] = g;
    }
  }
  return { width, height, data };
}

/**
 * Raw per-pixel indices of a paletted or grayscale PNG (the engine's
 * label maps are paletted, so the index IS the class id).
 */
export function readPngIndices(path: string): { width: number; height: number; data: Uint8Array } {
  const { width, height, colorType, pixels } = parsePng(readFileSync(path));
  if (colorType !== 3 && colorType !== 0) {
    throw new Error(`PNG color type ${colorType} carries no index plane`);
  }
  return { width, height, data: pixels };
}

function unfilterRow(
  filter: number,
  line: Uint8Array,
  row: Uint8Array,
  prev: Uint8Array,
  channels: number,
) {
  const bpp = channels;
  for (let x = 0; x < line.length; x++) {
    const left = x >= bpp ? row[x - bpp] : 0;
    const up = prev[x];
    const upLeft = x >= bpp ? prev[x - bpp] : 0;
    let value = line[x];
    switch (filter) {
      case 0:
        break;
      case 1:
        value += left;
        break;
      case 2:
        value += up;
        break;
      case 3:
        value += (left + up) >> 1;
        break;
      case 4: {
        const p = left + up - upLeft;
        const pa = Math.abs(p - left);
        const pb = Math.abs(p - up);
        const pc = Math.abs(p - upLeft);
        value += pa <= pb && pa <= pc ? left : pb <= pc ? up : upLeft;
        break;
      }
      default:
        throw new Error(`PNG filter ${filter} unsupported`);
    }
    row[x] = value & 0xff;
  }
}

/**
 * Bilinear RGB resize with half-pixel centers and edge clamping — the
 * same convention the engine uses for masks and features.
 */
export function resizeImage(image: RgbImage, outWidth: number, outHeight: number): RgbImage {
  const { width, height, data } = image;
  const out = new Uint8Array(outWidth * outHeight * 3);
  for (let i = 0; i < outHeight; i++) {
    let py = ((i + 0.5) * height) / outHeight - 0.5;
    py = Math.min(Math.max(py, 0), height - 1);
    const y0 = Math.floor(py);
    const y1 = Math.min(y0 + 1, height - 1);
    const ty = py - y0;
    for (let j = 0; j < outWidth; j++) {
      let px = ((j + 0.5) * width) / outWidth - 0.5;
      px = Math.min(Math.max(px, 0), width - 1);
      const x0 = Math.floor(px);
      const x1 = Math.min(x0 + 1, width - 1);
      const tx = px - x0;
      for (let c = 0; c < 3; c++) {
        const top =
          data[(y0 * width + x0) * 3 + c] * (1 - tx) + data[(y0 * width + x1) * 3 + c] * tx;
        const bot =
          data[(y1 * width + x0) * 3 + c] * (1 - tx) + data[(y1 * width + x1) * 3 + c] * tx;
        out[(i * outWidth + j) * 3 + c] = Math.round(top * (1 - ty) + bot * ty);
      }
    }
  }
  return { width: outWidth, height: outHeight, data: out };
}

/** Crop a window (pixel coordinates, top-left inclusive) out of an image. */
export function cropImage(image: RgbImage, x0: number, y0: number, size: number): RgbImage {
  const out = new Uint8Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    const src = ((y0 + y) * image.width + x0) * 3;
    out.set(image.data.subarray(src, src + size * 3), y * size * 3);
  }
  return { width: size, height: size, data: out };
}
