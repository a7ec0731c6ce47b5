#!/usr/bin/env node
/**
 * Exporter CLI.
 *
 *   extract features --model M --images PATH --out DIR [--crop-size 336]
 *   extract masks    --images PATH --out DIR [--preset street]
 *                    [--points-per-side N] [--pred-iou-thresh X]
 *                    [--stability-score-thresh X] [--box-nms-thresh X]
 *                    [--merge-iou 0.8]
 *   extract labels   --model M --names "red,green" | --names-file F
 *                    --out FILE [--template "a photo of a {}"]
 *
 * --images accepts a single image or a directory of .png/.ppm files;
 * outputs pair by file stem (<id>.txrb / <id>.txrm).
 */

import { readdirSync, readFileSync, statSync, mkdirSync } from 'node:fs';
import { basename, extname, join } from 'node:path';
import { readImage } from './image.js';
import { extractFeatures } from './extract.js';
import { generateMasks, DEFAULT_PARAMS, STREET_SCENE_PARAMS, SamParams } from './masks.js';
import { embedLabels, DEFAULT_TEMPLATE } from './labels.js';
import { writeBundleFile } from './txrb.js';
import { writeMaskSetFile } from './txrm.js';

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed flag ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function need(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) throw new Error(`--${name} is required`);
  return value;
}

function imageEntries(path: string): { id: string; path: string }[] {
  const stat = statSync(path);
  if (stat.isFile()) return [{ id: basename(path, extname(path)), path }];
  const entries = readdirSync(path)
    .filter((name) => /\.(png|ppm)$/i.test(name))
    .sort()
    .map((name) => ({ id: basename(name, extname(name)), path: join(path, name) }));
  if (entries.length === 0) throw new Error(`no .png/.ppm images in ${path}`);
  return entries;
}

function runFeatures(flags: Map<string, string>): void {
  const modelId = need(flags, 'model');
  const out = need(flags, 'out');
  mkdirSync(out, { recursive: true });
  const cropPx = Number(flags.get('crop-size') ?? 336);
  const labelNames = flags.get('names')?.split(',').map((s) => s.trim());
  for (const entry of imageEntries(need(flags, 'images'))) {
    const bundle = extractFeatures(readImage(entry.path), {
      modelId,
      cropPx,
      labelNames,
      template: flags.get('template'),
    });
    const bytes = writeBundleFile(bundle, join(out, `${entry.id}.txrb`));
    console.log(`${entry.id}.txrb: ${bytes} bytes, full grid ${bundle.fullGrid.join('x')}`);
  }
}

function runMasks(flags: Map<string, string>): void {
  const out = need(flags, 'out');
  mkdirSync(out, { recursive: true });
  const preset = flags.get('preset');
  const base = preset === 'street' ? STREET_SCENE_PARAMS : DEFAULT_PARAMS;
  if (preset && preset !== 'street') throw new Error(`unknown preset ${preset}`);
  const params: SamParams = {
    pointsPerSide: Number(flags.get('points-per-side') ?? base.pointsPerSide),
    predIouThresh: Number(flags.get('pred-iou-thresh') ?? base.predIouThresh),
    stabilityScoreThresh: Number(
      flags.get('stability-score-thresh') ?? base.stabilityScoreThresh,
    ),
    boxNmsThresh: Number(flags.get('box-nms-thresh') ?? base.boxNmsThresh),
  };
  const mergeIou = Number(flags.get('merge-iou') ?? 0.8);
  for (const entry of imageEntries(need(flags, 'images'))) {
    const maskSet = generateMasks(readImage(entry.path), params, mergeIou);
    const bytes = writeMaskSetFile(maskSet, join(out, `${entry.id}.txrm`));
    console.log(`${entry.id}.txrm: ${bytes} bytes, ${maskSet.regions.length} regions`);
  }
}

function runLabels(flags: Map<string, string>): void {
  const modelId = need(flags, 'model');
  const out = need(flags, 'out');
  let names: string[];
  if (flags.has('names-file')) {
    names = readFileSync(flags.get('names-file')!, 'utf-8')
      .split('\n')
      .map((line) => line.trim())
      .filter((line) => line.length > 0);
  } else {
    names = need(flags, 'names')
      .split(',')
      .map((s) => s.trim())
      .filter((s) => s.length > 0);
  }
  const bundle = embedLabels(modelId, names, flags.get('template') ?? DEFAULT_TEMPLATE);
  const bytes = writeBundleFile(bundle, out);
  console.log(`${out}: ${bytes} bytes, ${names.length} labels`);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    if (command === 'features') runFeatures(flags);
    else if (command === 'masks') runMasks(flags);
    else if (command === 'labels') runLabels(flags);
    else {
      console.error('usage: extract features|masks|labels [flags]');
      return 1;
    }
    return 0;
  } catch (error) {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    return 1;
  }
}

if (process.argv[1] && /cli\.(js|ts)$/.test(process.argv[1])) {
  process.exit(main(process.argv.slice(2)));
}
