/**
 * Convert a channels-last checkpoint into a channels-first op graph.
 *
 * The engine's interchange format is channels-first and splits fused
 * activations into standalone relu layers, so conversion has to transpose
 * conv kernels (HWIO -> OIHW), transpose dense kernels, and permute the
 * input indices of any dense layer that consumes a flattened feature map
 * (channels-last flattening visits h, w, c; channels-first visits c, h, w).
 */

import { Checkpoint, CheckpointLayer, WeightEntry } from './tfjs.js';

export type NodeKind =
  | 'dense' | 'conv2d' | 'relu' | 'maxpool2d' | 'flatten'
  | 'add' | 'globalavgpool' | 'softmax';

/** Kinds the interchange format can represent. */
export const INTERCHANGE_KINDS: ReadonlySet<NodeKind> =
  new Set(['dense', 'conv2d', 'relu', 'maxpool2d', 'flatten']);

export interface GraphNode {
  kind: NodeKind;
  name: string;               // source layer name ('' for synthesized nodes)
  inputs: number[];           // node indices; -1 is the model input
  weights?: Float64Array;     // conv: OIHW, dense: (out, in), row-major
  bias?: Float64Array;
  inFeatures?: number;
  outFeatures?: number;
  inChannels?: number;
  outChannels?: number;
  kernelSize?: number;
  stride?: number;
  padding?: number;
}

export interface ConvertedModel {
  name: string;
  /** Channels-first (c, h, w) input shape. */
  inputShape: [number, number, number];
  nodes: GraphNode[];
  outputs: number[];
  /** Source layers that could not be expressed in the interchange format. */
  unsupported: { layer: string; reason: string }[];
}

type Shape = number[];

function findWeight(layer: CheckpointLayer, suffix: string): WeightEntry | null {
  return layer.weights.find((w) => w.name.endsWith(`/${suffix}`)) ?? null;
}

function convKernelToOIHW(entry: WeightEntry): Float64Array {
  const [kh, kw, inC, outC] = entry.shape;
  const out = new Float64Array(entry.data.length);
  for (let y = 0; y < kh; y++) {
    for (let x = 0; x < kw; x++) {
      for (let i = 0; i < inC; i++) {
        for (let o = 0; o < outC; o++) {
          const src = ((y * kw + x) * inC + i) * outC + o;
          const dst = ((o * inC + i) * kh + y) * kw + x;
          out[dst] = entry.data[src];
        }
      }
    }
  }
  return out;
}

function denseKernel(entry: WeightEntry, flatSource: Shape | null): Float64Array {
  const [inF, outF] = entry.shape;
  const out = new Float64Array(entry.data.length);
  if (flatSource && flatSource.length === 3) {
    // flatSource is the channels-first (c, h, w) shape feeding the flatten
    const [c, h, w] = flatSource;
    for (let o = 0; o < outF; o++) {
      for (let ci = 0; ci < c; ci++) {
        for (let y = 0; y < h; y++) {
          for (let x = 0; x < w; x++) {
            const tfIndex = (y * w + x) * c + ci;      // channels-last flatten
            const chwIndex = (ci * h + y) * w + x;     // channels-first flatten
            out[o * inF + chwIndex] = entry.data[tfIndex * outF + o];
          }
        }
      }
    }
  } else {
    for (let o = 0; o < outF; o++) {
      for (let i = 0; i < inF; i++) {
        out[o * inF + i] = entry.data[i * outF + o];
      }
    }
  }
  return out;
}

function asPair(value: unknown, what: string): number {
  if (typeof value === 'number') return value;
  if (Array.isArray(value) && value.length === 2 && value[0] === value[1]) {
    return Number(value[0]);
  }
  throw new Error(`${what} must be square, got ${JSON.stringify(value)}`);
}

export function convertCheckpoint(cp: Checkpoint): ConvertedModel {
  if (cp.inputShape.length !== 3 && cp.inputShape.length !== 1) {
    throw new Error(`unsupported input rank ${cp.inputShape.length}`);
  }
  const inputShape: [number, number, number] = cp.inputShape.length === 3
    ? [cp.inputShape[2], cp.inputShape[0], cp.inputShape[1]]
    : [cp.inputShape[0], 1, 1];

  const nodes: GraphNode[] = [];
  const unsupported: { layer: string; reason: string }[] = [];
  // node index + channels-first output shape per source layer name
  const byName = new Map<string, { index: number; shape: Shape }>();
  // flat inputs (rank-1) have no spatial permutation to undo
  const flatSourceByIndex = new Map<number, Shape | null>();

  const inputSpatial: Shape = cp.inputShape.length === 3
    ? inputShape : [inputShape[0]];

  function resolveInputs(layer: CheckpointLayer): { index: number; shape: Shape }[] {
    if (layer.inbound.length === 0) {
      return [{ index: -1, shape: inputSpatial }];
    }
    return layer.inbound.map((name) => {
      const got = byName.get(name);
      if (got) return got;
      return { index: -1, shape: inputSpatial };  // inbound was the InputLayer
    });
  }

  function push(node: GraphNode, source: string, shape: Shape): { index: number; shape: Shape } {
    nodes.push(node);
    const ref = { index: nodes.length - 1, shape };
    if (source) byName.set(source, ref);
    return ref;
  }

  for (const layer of cp.layers) {
    const inputs = resolveInputs(layer);
    const cfg = layer.config as any;
    const dataFormat = cfg.data_format ?? 'channelsLast';
    try {
      switch (layer.className) {
        case 'Conv2D': {
          if (dataFormat !== 'channelsLast' && dataFormat !== 'channels_last') {
            throw new Error(`data_format ${dataFormat} not supported`);
          }
          checkActivation(cfg.activation);
          const [inRef] = inputs;
          const [c, h, w] = inRef.shape;
          const kernel = findWeight(layer, 'kernel');
          if (!kernel) throw new Error('missing conv kernel weight');
          const k = asPair(cfg.kernel_size, 'kernel_size');
          const stride = asPair(cfg.strides ?? 1, 'strides');
          let padding: number;
          if (cfg.padding === 'valid' || cfg.padding === undefined) {
            padding = 0;
          } else if (cfg.padding === 'same') {
            if (stride !== 1 || k % 2 === 0) {
              throw new Error('same padding only supported for stride 1, odd kernels');
            }
            padding = (k - 1) / 2;
          } else {
            throw new Error(`padding mode ${cfg.padding} not supported`);
          }
          const outC = Number(cfg.filters);
          const oh = Math.floor((h + 2 * padding - k) / stride) + 1;
          const ow = Math.floor((w + 2 * padding - k) / stride) + 1;
          const bias = cfg.use_bias === false ? null : findWeight(layer, 'bias');
          let ref = push({
            kind: 'conv2d', name: layer.name, inputs: [inRef.index],
            weights: convKernelToOIHW(kernel),
            bias: bias ? bias.data : undefined,
            inChannels: c, outChannels: outC, kernelSize: k,
            stride, padding,
          }, layer.name, [outC, oh, ow]);
          ref = applyActivation(cfg.activation, layer.name, ref);
          break;
        }
        case 'Dense': {
          checkActivation(cfg.activation);
          const [inRef] = inputs;
          if (inRef.shape.length !== 1) {
            throw new Error('dense layer needs a flat input (insert Flatten)');
          }
          const kernel = findWeight(layer, 'kernel');
          if (!kernel) throw new Error('missing dense kernel weight');
          const bias = cfg.use_bias === false ? null : findWeight(layer, 'bias');
          const flatSource = flatSourceByIndex.get(inRef.index) ?? null;
          const outF = Number(cfg.units);
          let ref = push({
            kind: 'dense', name: layer.name, inputs: [inRef.index],
            weights: denseKernel(kernel, flatSource),
            bias: bias ? bias.data : undefined,
            inFeatures: kernel.shape[0], outFeatures: outF,
          }, layer.name, [outF]);
          ref = applyActivation(cfg.activation, layer.name, ref);
          break;
        }
        case 'MaxPooling2D': {
          const [inRef] = inputs;
          if ((cfg.padding ?? 'valid') !== 'valid') {
            throw new Error('maxpool padding must be valid');
          }
          const k = asPair(cfg.pool_size ?? 2, 'pool_size');
          const stride = asPair(cfg.strides ?? k, 'strides');
          const [c, h, w] = inRef.shape;
          const oh = Math.floor((h - k) / stride) + 1;
          const ow = Math.floor((w - k) / stride) + 1;
          push({
            kind: 'maxpool2d', name: layer.name, inputs: [inRef.index],
            kernelSize: k, stride,
          }, layer.name, [c, oh, ow]);
          break;
        }
        case 'Flatten': {
          const [inRef] = inputs;
          const flat = inRef.shape.reduce((a, b) => a * b, 1);
          const ref = push({
            kind: 'flatten', name: layer.name, inputs: [inRef.index],
          }, layer.name, [flat]);
          flatSourceByIndex.set(
            ref.index, inRef.shape.length === 3 ? inRef.shape : null);
          break;
        }
        case 'Activation': {
          const [inRef] = inputs;
          const which = String(cfg.activation);
          if (which === 'relu') {
            push({ kind: 'relu', name: layer.name, inputs: [inRef.index] },
                 layer.name, inRef.shape);
          } else if (which === 'softmax') {
            push({ kind: 'softmax', name: layer.name, inputs: [inRef.index] },
                 layer.name, inRef.shape);
          } else if (which === 'linear') {
            byName.set(layer.name, inRef);
          } else {
            throw new Error(`activation ${which} not supported`);
          }
          break;
        }
        case 'ReLU': {
          const [inRef] = inputs;
          push({ kind: 'relu', name: layer.name, inputs: [inRef.index] },
               layer.name, inRef.shape);
          break;
        }
        case 'Add': {
          push({
            kind: 'add', name: layer.name,
            inputs: inputs.map((r) => r.index),
          }, layer.name, inputs[0].shape);
          break;
        }
        case 'GlobalAveragePooling2D': {
          const [inRef] = inputs;
          push({ kind: 'globalavgpool', name: layer.name, inputs: [inRef.index] },
               layer.name, [inRef.shape[0]]);
          break;
        }
        case 'Dropout': {
          // inference no-op
          byName.set(layer.name, inputs[0]);
          break;
        }
        default:
          throw new Error(`layer class ${layer.className} not supported`);
      }
    } catch (err) {
      unsupported.push({ layer: layer.name, reason: String((err as Error).message) });
      // keep the graph traversable: alias this layer to its first input
      if (inputs.length > 0) byName.set(layer.name, inputs[0]);
    }
  }

  function checkActivation(activation: unknown): void {
    const which = activation == null ? 'linear' : String(activation);
    if (which !== 'linear' && which !== 'relu' && which !== 'softmax') {
      throw new Error(`activation ${which} not supported`);
    }
  }

  function applyActivation(activation: unknown, source: string,
                           ref: { index: number; shape: Shape }) {
    const which = activation == null ? 'linear' : String(activation);
    if (which === 'linear') return ref;
    const kind: NodeKind = which === 'relu' ? 'relu' : 'softmax';
    return push({ kind, name: '', inputs: [ref.index] }, source, ref.shape);
  }

  const consumed = new Set<number>();
  for (const node of nodes) {
    for (const i of node.inputs) consumed.add(i);
  }
  const outputs = nodes.map((_, i) => i).filter((i) => !consumed.has(i));
  return { name: cp.name, inputShape, nodes, outputs, unsupported };
}
