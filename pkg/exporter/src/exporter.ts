/**
 * Export orchestration: checkpoint -> interchange model + calibration
 * dataset, or (for graphs the engine cannot execute) a stats-only export.
 * Every export writes a manifest recording the layer mapping and everything
 * that was skipped, with reasons.
 */

import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { convertCheckpoint, ConvertedModel, INTERCHANGE_KINDS } from './convert.js';
import { computeLayerStats, forwardSample } from './forward.js';
import { datasetDocument, statsDocument, toInterchange } from './interchange.js';
import { mulberry32, Tensor, fromArray } from './tensor.js';
import { readCheckpoint } from './tfjs.js';
import { resolveModel } from './zoo.js';

export const FORMAT_VERSION = 1;

export interface ExportManifest {
  format_version: number;
  source_model: string;
  checkpoint: string;
  mode: 'full' | 'stats-only';
  sample_count: number;
  layer_map: { source: string; kind: string; interchange_index: number }[];
  skipped_layers: { source: string; reason: string }[];
  outputs: { model?: string; dataset?: string; stats?: string; manifest: string };
}

export interface ExportOptions {
  modelId: string;
  sampleCount: number;
  outDir: string;
  statsOnly?: boolean;
  seed?: number;
  cacheDir?: string;
}

function calibrationSamples(shape: [number, number, number], count: number,
                            seed: number): Tensor[] {
  const rand = mulberry32(seed);
  const size = shape[0] * shape[1] * shape[2];
  const out: Tensor[] = [];
  for (let i = 0; i < count; i++) {
    const values = new Float64Array(size);
    for (let j = 0; j < size; j++) values[j] = rand();
    out.push(fromArray(values, [...shape]));
  }
  return out;
}

function argmax(values: Float64Array): number {
  let best = 0;
  for (let i = 1; i < values.length; i++) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

function layerMap(model: ConvertedModel) {
  const map: { source: string; kind: string; interchange_index: number }[] = [];
  model.nodes.forEach((node, i) => {
    if (node.name && INTERCHANGE_KINDS.has(node.kind)) {
      map.push({ source: node.name, kind: node.kind, interchange_index: i });
    }
  });
  return map;
}

function writeJson(filePath: string, doc: unknown): void {
  fs.writeFileSync(filePath, JSON.stringify(doc) + '\n');
}

export function exportModel(options: ExportOptions): ExportManifest {
  if (options.sampleCount < 1) {
    throw new Error('sample count must be at least 1');
  }
  const cacheDir = options.cacheDir ??
    path.join(os.tmpdir(), 'quantproxy-exporter-zoo');
  const checkpointPath = resolveModel(options.modelId, cacheDir);
  const checkpoint = readCheckpoint(checkpointPath);
  const converted = convertCheckpoint(checkpoint);
  fs.mkdirSync(options.outDir, { recursive: true });

  const interchange = options.statsOnly
    ? { reason: 'stats-only export requested' }
    : toInterchange(converted);
  const samples = calibrationSamples(converted.inputShape,
                                     options.sampleCount,
                                     options.seed ?? 7);

  const manifest: ExportManifest = {
    format_version: FORMAT_VERSION,
    source_model: options.modelId,
    checkpoint: checkpointPath,
    mode: 'doc' in interchange ? 'full' : 'stats-only',
    sample_count: options.sampleCount,
    layer_map: layerMap(converted),
    skipped_layers: converted.unsupported.map(
      (u) => ({ source: u.layer, reason: u.reason })),
    outputs: { manifest: path.join(options.outDir, 'manifest.json') },
  };

  if ('doc' in interchange) {
    const labels: number[] = [];
    let numClasses = 0;
    for (const sample of samples) {
      const { output } = forwardSample(converted, sample);
      numClasses = output.data.length;
      labels.push(argmax(output.data));
    }
    const modelPath = path.join(options.outDir, 'model.json');
    const dataPath = path.join(options.outDir, 'calib.json');
    writeJson(modelPath, interchange.doc);
    writeJson(dataPath, datasetDocument(samples, labels, numClasses));
    manifest.outputs.model = modelPath;
    manifest.outputs.dataset = dataPath;
  } else if (!options.statsOnly) {
    // full export impossible; record why and fall back to statistics
    manifest.skipped_layers.push({ source: '(model)',
                                   reason: interchange.reason });
  }

  if (manifest.mode === 'stats-only' || options.statsOnly) {
    manifest.mode = 'stats-only';
    const stats = computeLayerStats(converted, samples);
    const statsPath = path.join(options.outDir, 'stats.json');
    writeJson(statsPath, statsDocument(stats));
    manifest.outputs.stats = statsPath;
  }

  writeJson(manifest.outputs.manifest, manifest);
  return manifest;
}
