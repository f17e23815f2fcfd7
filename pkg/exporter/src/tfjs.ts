/**
 * Reader for the TensorFlow.js Layers checkpoint format: a model.json with
 * the topology plus binary weight shards referenced by its weightsManifest.
 * No framework runtime involved; weights are decoded straight from the
 * float32 shard bytes.
 */

import * as fs from 'fs';
import * as path from 'path';

export interface WeightEntry {
  name: string;
  shape: number[];
  data: Float64Array;
}

export interface CheckpointLayer {
  className: string;
  name: string;
  config: Record<string, unknown>;
  inbound: string[];
  weights: WeightEntry[];
}

export interface Checkpoint {
  name: string;
  /** Channels-last input shape with the batch dimension stripped. */
  inputShape: number[];
  layers: CheckpointLayer[];
  sequential: boolean;
}

interface ManifestGroup {
  paths: string[];
  weights: { name: string; shape: number[]; dtype: string }[];
}

function readWeights(dir: string, manifest: ManifestGroup[]): Map<string, WeightEntry> {
  const out = new Map<string, WeightEntry>();
  for (const group of manifest) {
    const buffers = group.paths.map((p) => fs.readFileSync(path.join(dir, p)));
    const blob = Buffer.concat(buffers);
    let offset = 0;
    for (const spec of group.weights) {
      if (spec.dtype !== 'float32') {
        throw new Error(`weight ${spec.name}: unsupported dtype ${spec.dtype}`);
      }
      const count = spec.shape.reduce((a, b) => a * b, 1);
      const view = new Float32Array(
        blob.buffer, blob.byteOffset + offset, count);
      out.set(spec.name, {
        name: spec.name,
        shape: [...spec.shape],
        data: Float64Array.from(view),
      });
      offset += count * 4;
    }
    if (offset !== blob.length) {
      throw new Error(
        `weight shard size mismatch: manifest describes ${offset} bytes, ` +
        `shards hold ${blob.length}`);
    }
  }
  return out;
}

function layerWeights(name: string, pool: Map<string, WeightEntry>): WeightEntry[] {
  const found: WeightEntry[] = [];
  for (const [key, entry] of pool) {
    if (key === name || key.startsWith(`${name}/`)) found.push(entry);
  }
  return found;
}

function inboundNames(node: unknown): string[] {
  // Keras serializes inbound_nodes as [[[name, nodeIndex, tensorIndex, kwargs], ...], ...]
  if (!Array.isArray(node) || node.length === 0) return [];
  const first = node[0];
  if (!Array.isArray(first)) return [];
  return first
    .filter((entry): entry is unknown[] => Array.isArray(entry))
    .map((entry) => String(entry[0]));
}

function stripBatch(shape: unknown): number[] {
  if (!Array.isArray(shape)) {
    throw new Error('checkpoint declares no batch_input_shape');
  }
  return shape.slice(1).map((v) => {
    if (typeof v !== 'number' || v < 1) {
      throw new Error(`bad input dimension ${v}`);
    }
    return v;
  });
}

export function readCheckpoint(modelJsonPath: string): Checkpoint {
  const doc = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'));
  const topology = doc.modelTopology;
  if (!topology || !topology.config) {
    throw new Error(`${modelJsonPath}: not a layers-model checkpoint`);
  }
  const weights = readWeights(path.dirname(modelJsonPath),
                              doc.weightsManifest ?? []);
  const className = topology.class_name;
  const config = topology.config;
  const rawLayers: any[] = config.layers ?? [];
  if (rawLayers.length === 0) {
    throw new Error(`${modelJsonPath}: checkpoint has no layers`);
  }

  const layers: CheckpointLayer[] = [];
  let inputShape: number[] | null = null;
  if (className === 'Sequential') {
    let previous: string | null = null;
    for (const raw of rawLayers) {
      const cfg = raw.config ?? {};
      const name = String(cfg.name ?? raw.class_name);
      if (raw.class_name === 'InputLayer') {
        inputShape = stripBatch(cfg.batch_input_shape);
        continue;
      }
      if (inputShape === null && cfg.batch_input_shape) {
        inputShape = stripBatch(cfg.batch_input_shape);
      }
      layers.push({
        className: raw.class_name,
        name,
        config: cfg,
        inbound: previous ? [previous] : [],
        weights: layerWeights(name, weights),
      });
      previous = name;
    }
  } else if (className === 'Model' || className === 'Functional') {
    for (const raw of rawLayers) {
      const cfg = raw.config ?? {};
      const name = String(raw.name ?? cfg.name ?? raw.class_name);
      if (raw.class_name === 'InputLayer') {
        inputShape = stripBatch(cfg.batch_input_shape);
        continue;
      }
      layers.push({
        className: raw.class_name,
        name,
        config: cfg,
        inbound: inboundNames(raw.inbound_nodes),
        weights: layerWeights(name, weights),
      });
    }
  } else {
    throw new Error(`unsupported model class ${className}`);
  }
  if (inputShape === null) {
    throw new Error('checkpoint declares no input shape');
  }
  return {
    name: String(config.name ?? 'model'),
    inputShape,
    layers,
    sequential: className === 'Sequential',
  };
}
