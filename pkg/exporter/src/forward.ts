/**
 * Float64 forward pass over the converted channels-first graph, plus the
 * per-layer statistics the engine's expressions consume. Definitions mirror
 * the engine exactly (Frobenius norms over weights only, 256-bin base-2
 * activation entropy over the observed range, two-pass standard deviation)
 * so exported statistics agree with engine-computed ones to float precision.
 */

import { ConvertedModel, GraphNode } from './convert.js';
import { Tensor, fromArray, zeros } from './tensor.js';

const ENTROPY_BINS = 256;

function conv2d(input: Tensor, node: GraphNode): Tensor {
  const [c, h, w] = input.shape;
  const k = node.kernelSize!;
  const s = node.stride!;
  const p = node.padding!;
  const outC = node.outChannels!;
  const oh = Math.floor((h + 2 * p - k) / s) + 1;
  const ow = Math.floor((w + 2 * p - k) / s) + 1;
  const out = zeros([outC, oh, ow]);
  const wts = node.weights!;
  for (let o = 0; o < outC; o++) {
    const biasValue = node.bias ? node.bias[o] : 0.0;
    for (let y = 0; y < oh; y++) {
      for (let x = 0; x < ow; x++) {
        let total = 0.0;
        for (let i = 0; i < c; i++) {
          for (let ky = 0; ky < k; ky++) {
            const sy = y * s + ky - p;
            if (sy < 0 || sy >= h) continue;
            for (let kx = 0; kx < k; kx++) {
              const sx = x * s + kx - p;
              if (sx < 0 || sx >= w) continue;
              total += input.data[(i * h + sy) * w + sx] *
                wts[((o * c + i) * k + ky) * k + kx];
            }
          }
        }
        out.data[(o * oh + y) * ow + x] = total + biasValue;
      }
    }
  }
  return out;
}

function dense(input: Tensor, node: GraphNode): Tensor {
  const inF = node.inFeatures!;
  const outF = node.outFeatures!;
  const out = zeros([outF]);
  const wts = node.weights!;
  for (let o = 0; o < outF; o++) {
    let total = 0.0;
    for (let i = 0; i < inF; i++) {
      total += wts[o * inF + i] * input.data[i];
    }
    out.data[o] = total + (node.bias ? node.bias[o] : 0.0);
  }
  return out;
}

function maxpool(input: Tensor, node: GraphNode): Tensor {
  const [c, h, w] = input.shape;
  const k = node.kernelSize!;
  const s = node.stride!;
  const oh = Math.floor((h - k) / s) + 1;
  const ow = Math.floor((w - k) / s) + 1;
  const out = zeros([c, oh, ow]);
  for (let ci = 0; ci < c; ci++) {
    for (let y = 0; y < oh; y++) {
      for (let x = 0; x < ow; x++) {
        let best = -Infinity;
        for (let ky = 0; ky < k; ky++) {
          for (let kx = 0; kx < k; kx++) {
            const v = input.data[(ci * h + (y * s + ky)) * w + (x * s + kx)];
            if (v > best) best = v;
          }
        }
        out.data[(ci * oh + y) * ow + x] = best;
      }
    }
  }
  return out;
}

function softmax(input: Tensor): Tensor {
  let max = -Infinity;
  for (const v of input.data) if (v > max) max = v;
  const out = zeros(input.shape);
  let total = 0.0;
  for (let i = 0; i < input.data.length; i++) {
    out.data[i] = Math.exp(input.data[i] - max);
    total += out.data[i];
  }
  for (let i = 0; i < out.data.length; i++) out.data[i] /= total;
  return out;
}

/**
 * Run one sample through the graph. Returns the output tensor and, when
 * capture is set, each node's output.
 */
export function forwardSample(model: ConvertedModel, sample: Tensor,
                              capture = false):
    { output: Tensor; captured: (Tensor | null)[] } {
  const results: Tensor[] = new Array(model.nodes.length);
  const captured: (Tensor | null)[] = new Array(model.nodes.length).fill(null);
  const valueOf = (index: number): Tensor =>
    index === -1 ? sample : results[index];
  model.nodes.forEach((node, idx) => {
    const input = valueOf(node.inputs[0]);
    let out: Tensor;
    switch (node.kind) {
      case 'conv2d':
        out = conv2d(input, node);
        break;
      case 'dense':
        out = dense(input, node);
        break;
      case 'relu':
        out = fromArray(Array.from(input.data, (v) => (v > 0 ? v : 0)),
                        input.shape);
        break;
      case 'maxpool2d':
        out = maxpool(input, node);
        break;
      case 'flatten':
        out = { data: input.data.slice(), shape: [input.data.length] };
        break;
      case 'softmax':
        out = softmax(input);
        break;
      case 'globalavgpool': {
        const [c, h, w] = input.shape;
        out = zeros([c]);
        for (let ci = 0; ci < c; ci++) {
          let total = 0.0;
          for (let i = 0; i < h * w; i++) total += input.data[ci * h * w + i];
          out.data[ci] = total / (h * w);
        }
        break;
      }
      case 'add': {
        out = { data: input.data.slice(), shape: [...input.shape] };
        for (let j = 1; j < node.inputs.length; j++) {
          const other = valueOf(node.inputs[j]);
          for (let i = 0; i < out.data.length; i++) out.data[i] += other.data[i];
        }
        break;
      }
      default:
        throw new Error(`cannot execute node kind ${(node as GraphNode).kind}`);
    }
    results[idx] = out;
    if (capture) captured[idx] = out;
  });
  if (model.outputs.length !== 1) {
    throw new Error(`graph must have exactly one output, found ${model.outputs.length}`);
  }
  return { output: results[model.outputs[0]], captured };
}

export interface LayerStatsRecord {
  w_l2: number;
  w_l1_mean: number;
  w_std: number;
  w_max_abs: number;
  n_params: number;
  a_entropy: number;
  a_mean_abs: number;
  a_std: number;
  a_max_abs: number;
  depth: number;
  total_layers: number;
  layer_class: 'conv' | 'linear';
}

function twoPassStd(values: ArrayLike<number>): number {
  const n = values.length;
  let mean = 0.0;
  for (let i = 0; i < n; i++) mean += values[i];
  mean /= n;
  let varSum = 0.0;
  for (let i = 0; i < n; i++) {
    const d = values[i] - mean;
    varSum += d * d;
  }
  return Math.sqrt(varSum / n);
}

export function activationEntropy(values: Float64Array,
                                  bins = ENTROPY_BINS): number {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo === hi) return 0.0;
  const counts = new Float64Array(bins);
  const width = (hi - lo) / bins;
  for (const v of values) {
    let idx = Math.floor((v - lo) / (hi - lo) * bins);
    if (idx >= bins) idx = bins - 1;
    // snap values sitting exactly on an edge the way uniform-bin
    // histogramming resolves them (left-closed bins, last bin closed)
    if (v < lo + idx * width) idx -= 1;
    else if (idx < bins - 1 && v >= lo + (idx + 1) * width) idx += 1;
    counts[idx] += 1;
  }
  let entropy = 0.0;
  for (const c of counts) {
    if (c > 0) {
      const p = c / values.length;
      entropy -= p * Math.log2(p);
    }
  }
  return entropy;
}

/**
 * Per-parameterized-layer statistics over a batch of samples, in depth
 * order, matching the engine's definitions field for field.
 */
export function computeLayerStats(model: ConvertedModel,
                                  samples: Tensor[]): LayerStatsRecord[] {
  const paramNodes = model.nodes
    .map((node, index) => ({ node, index }))
    .filter(({ node }) => node.kind === 'dense' || node.kind === 'conv2d');
  if (paramNodes.length === 0) {
    throw new Error('model has no parameterized layers');
  }
  const activations: Float64Array[][] = paramNodes.map(() => []);
  for (const sample of samples) {
    const { captured } = forwardSample(model, sample, true);
    paramNodes.forEach(({ index }, pi) => {
      activations[pi].push(captured[index]!.data);
    });
  }
  return paramNodes.map(({ node }, pi) => {
    const wts = node.weights!;
    let sumSq = 0.0;
    let sumAbs = 0.0;
    let maxAbs = 0.0;
    for (const v of wts) {
      sumSq += v * v;
      const a = Math.abs(v);
      sumAbs += a;
      if (a > maxAbs) maxAbs = a;
    }
    const chunks = activations[pi];
    const total = chunks.reduce((a, c) => a + c.length, 0);
    const acts = new Float64Array(total);
    let offset = 0;
    for (const c of chunks) {
      acts.set(c, offset);
      offset += c.length;
    }
    let actAbsSum = 0.0;
    let actMaxAbs = 0.0;
    for (const v of acts) {
      const a = Math.abs(v);
      actAbsSum += a;
      if (a > actMaxAbs) actMaxAbs = a;
    }
    return {
      w_l2: Math.sqrt(sumSq),
      w_l1_mean: sumAbs / wts.length,
      w_std: twoPassStd(wts),
      w_max_abs: maxAbs,
      n_params: wts.length + (node.bias ? node.bias.length : 0),
      a_entropy: activationEntropy(acts),
      a_mean_abs: actAbsSum / acts.length,
      a_std: twoPassStd(acts),
      a_max_abs: actMaxAbs,
      depth: pi + 1,
      total_layers: paramNodes.length,
      layer_class: node.kind === 'conv2d' ? 'conv' : 'linear',
    };
  });
}
