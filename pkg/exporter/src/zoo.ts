/**
 * Bundled model zoo: small deterministic TensorFlow.js Layers checkpoints
 * written on demand. They exist so the exporter can be exercised (and its
 * parity against the engine verified) without network access; any real
 * locally saved layers-model checkpoint goes through the same reader.
 */

import * as fs from 'fs';
import * as path from 'path';
import { gaussian, mulberry32 } from './tensor.js';

export const ZOO_IDS = ['zoo:mlp-tiny', 'zoo:cnn-small', 'zoo:resnet-toy'] as const;

interface WeightSpec {
  name: string;
  shape: number[];
  values: Float32Array;
}

function heWeights(rand: () => number, shape: number[], fanIn: number,
                   gain = 1.0): Float32Array {
  const count = shape.reduce((a, b) => a * b, 1);
  const scale = gain * Math.sqrt(2.0 / fanIn);
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = gaussian(rand) * scale;
  return out;
}

function biasWeights(rand: () => number, count: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = gaussian(rand) * 0.05;
  return out;
}

function writeCheckpoint(dir: string, topology: object, weights: WeightSpec[]): string {
  fs.mkdirSync(dir, { recursive: true });
  const manifest = {
    paths: ['group1-shard1of1.bin'],
    weights: weights.map((w) => ({ name: w.name, shape: w.shape,
                                   dtype: 'float32' })),
  };
  const totalBytes = weights.reduce((a, w) => a + w.values.length * 4, 0);
  const blob = Buffer.alloc(totalBytes);
  let offset = 0;
  for (const w of weights) {
    for (const v of w.values) {
      blob.writeFloatLE(v, offset);
      offset += 4;
    }
  }
  fs.writeFileSync(path.join(dir, 'group1-shard1of1.bin'), blob);
  const doc = {
    format: 'layers-model',
    generatedBy: 'quantproxy-exporter zoo',
    convertedBy: null,
    modelTopology: topology,
    weightsManifest: [manifest],
  };
  const modelPath = path.join(dir, 'model.json');
  fs.writeFileSync(modelPath, JSON.stringify(doc));
  return modelPath;
}

function mlpTiny(dir: string): string {
  const rand = mulberry32(101);
  const weights: WeightSpec[] = [
    { name: 'dense_1/kernel', shape: [64, 24],
      values: heWeights(rand, [64, 24], 64) },
    { name: 'dense_1/bias', shape: [24], values: biasWeights(rand, 24) },
    { name: 'dense_2/kernel', shape: [24, 4],
      values: heWeights(rand, [24, 4], 24) },
    { name: 'dense_2/bias', shape: [4], values: biasWeights(rand, 4) },
  ];
  const topology = {
    class_name: 'Sequential',
    config: {
      name: 'mlp-tiny',
      layers: [
        { class_name: 'Flatten',
          config: { name: 'flatten_1', batch_input_shape: [null, 8, 8, 1] } },
        { class_name: 'Dense',
          config: { name: 'dense_1', units: 24, activation: 'relu',
                    use_bias: true } },
        { class_name: 'Dense',
          config: { name: 'dense_2', units: 4, activation: 'linear',
                    use_bias: true } },
      ],
    },
  };
  return writeCheckpoint(dir, topology, weights);
}

function cnnSmall(dir: string): string {
  const rand = mulberry32(202);
  const weights: WeightSpec[] = [
    { name: 'conv2d_1/kernel', shape: [3, 3, 1, 4],
      values: heWeights(rand, [3, 3, 1, 4], 9) },
    { name: 'conv2d_1/bias', shape: [4], values: biasWeights(rand, 4) },
    { name: 'conv2d_2/kernel', shape: [3, 3, 4, 8],
      values: heWeights(rand, [3, 3, 4, 8], 36) },
    { name: 'conv2d_2/bias', shape: [8], values: biasWeights(rand, 8) },
    { name: 'dense_head/kernel', shape: [128, 4],
      values: heWeights(rand, [128, 4], 128) },
    { name: 'dense_head/bias', shape: [4], values: biasWeights(rand, 4) },
  ];
  const topology = {
    class_name: 'Sequential',
    config: {
      name: 'cnn-small',
      layers: [
        { class_name: 'Conv2D',
          config: { name: 'conv2d_1', filters: 4, kernel_size: [3, 3],
                    strides: [1, 1], padding: 'same', activation: 'relu',
                    use_bias: true, batch_input_shape: [null, 8, 8, 1],
                    data_format: 'channelsLast' } },
        { class_name: 'MaxPooling2D',
          config: { name: 'pool_1', pool_size: [2, 2], strides: [2, 2],
                    padding: 'valid' } },
        { class_name: 'Conv2D',
          config: { name: 'conv2d_2', filters: 8, kernel_size: [3, 3],
                    strides: [1, 1], padding: 'same', activation: 'relu',
                    use_bias: true, data_format: 'channelsLast' } },
        { class_name: 'Flatten', config: { name: 'flatten_1' } },
        { class_name: 'Dense',
          config: { name: 'dense_head', units: 4, activation: 'linear',
                    use_bias: true } },
      ],
    },
  };
  return writeCheckpoint(dir, topology, weights);
}

function resnetToy(dir: string): string {
  const rand = mulberry32(303);
  const weights: WeightSpec[] = [
    { name: 'conv_in/kernel', shape: [3, 3, 1, 4],
      values: heWeights(rand, [3, 3, 1, 4], 9) },
    { name: 'conv_in/bias', shape: [4], values: biasWeights(rand, 4) },
    { name: 'conv_res/kernel', shape: [3, 3, 4, 4],
      values: heWeights(rand, [3, 3, 4, 4], 36) },
    { name: 'conv_res/bias', shape: [4], values: biasWeights(rand, 4) },
    { name: 'dense_out/kernel', shape: [4, 4],
      values: heWeights(rand, [4, 4], 4) },
    { name: 'dense_out/bias', shape: [4], values: biasWeights(rand, 4) },
  ];
  // Functional graph with a residual add: input -> conv_in -> conv_res,
  // then add(conv_in, conv_res) -> global average pool -> dense head.
  const topology = {
    class_name: 'Functional',
    config: {
      name: 'resnet-toy',
      layers: [
        { class_name: 'InputLayer', name: 'input_1',
          config: { name: 'input_1', batch_input_shape: [null, 8, 8, 1] },
          inbound_nodes: [] },
        { class_name: 'Conv2D', name: 'conv_in',
          config: { name: 'conv_in', filters: 4, kernel_size: [3, 3],
                    strides: [1, 1], padding: 'same', activation: 'relu',
                    use_bias: true, data_format: 'channelsLast' },
          inbound_nodes: [[['input_1', 0, 0, {}]]] },
        { class_name: 'Conv2D', name: 'conv_res',
          config: { name: 'conv_res', filters: 4, kernel_size: [3, 3],
                    strides: [1, 1], padding: 'same', activation: 'relu',
                    use_bias: true, data_format: 'channelsLast' },
          inbound_nodes: [[['conv_in', 0, 0, {}]]] },
        { class_name: 'Add', name: 'add_1', config: { name: 'add_1' },
          inbound_nodes: [[['conv_in', 0, 0, {}], ['conv_res', 0, 0, {}]]] },
        { class_name: 'GlobalAveragePooling2D', name: 'gap_1',
          config: { name: 'gap_1' },
          inbound_nodes: [[['add_1', 0, 0, {}]]] },
        { class_name: 'Dense', name: 'dense_out',
          config: { name: 'dense_out', units: 4, activation: 'linear',
                    use_bias: true },
          inbound_nodes: [[['gap_1', 0, 0, {}]]] },
      ],
      input_layers: [['input_1', 0, 0]],
      output_layers: [['dense_out', 0, 0]],
    },
  };
  return writeCheckpoint(dir, topology, weights);
}

/**
 * Resolve a model id: zoo ids materialize a checkpoint under cacheDir and
 * return its model.json path; anything else must already be a model.json
 * path (or a directory containing one).
 */
export function resolveModel(modelId: string, cacheDir: string): string {
  if (modelId === 'zoo:mlp-tiny') {
    return mlpTiny(path.join(cacheDir, 'mlp-tiny'));
  }
  if (modelId === 'zoo:cnn-small') {
    return cnnSmall(path.join(cacheDir, 'cnn-small'));
  }
  if (modelId === 'zoo:resnet-toy') {
    return resnetToy(path.join(cacheDir, 'resnet-toy'));
  }
  if (modelId.startsWith('zoo:')) {
    throw new Error(`unknown zoo model ${modelId}; known: ${ZOO_IDS.join(', ')}`);
  }
  const asPath = modelId;
  if (fs.existsSync(asPath)) {
    const stat = fs.statSync(asPath);
    if (stat.isDirectory()) {
      const candidate = path.join(asPath, 'model.json');
      if (fs.existsSync(candidate)) return candidate;
      throw new Error(`${asPath} holds no model.json`);
    }
    return asPath;
  }
  throw new Error(`model ${modelId} not found (zoo id or checkpoint path)`);
}
