/**
 * Emit engine interchange documents (model, dataset, layer stats).
 * Field names follow docs/FORMATS.md in the repository root.
 */

import { ConvertedModel, GraphNode, INTERCHANGE_KINDS } from './convert.js';
import { LayerStatsRecord } from './forward.js';
import { Tensor } from './tensor.js';

export interface InterchangeLayer {
  kind: string;
  [key: string]: unknown;
}

export interface InterchangeModel {
  name: string;
  input_shape: number[];
  layers: InterchangeLayer[];
}

/**
 * A converted graph maps onto the interchange format only if it is a plain
 * chain of interchange-representable ops (softmax heads stripped when they
 * sit last). Returns null with a reason otherwise.
 */
export function toInterchange(model: ConvertedModel):
    { doc: InterchangeModel } | { reason: string } {
  if (model.unsupported.length > 0) {
    const first = model.unsupported[0];
    return { reason: `${first.layer}: ${first.reason}` };
  }
  let nodes = model.nodes;
  if (nodes.length > 0 && nodes[nodes.length - 1].kind === 'softmax') {
    // argmax semantics survive dropping a terminal softmax
    nodes = nodes.slice(0, -1);
  }
  const layers: InterchangeLayer[] = [];
  for (let i = 0; i < nodes.length; i++) {
    const node = nodes[i];
    if (!INTERCHANGE_KINDS.has(node.kind)) {
      return { reason: `${node.name || node.kind}: no interchange equivalent` };
    }
    if (node.inputs.length !== 1 || node.inputs[0] !== i - 1) {
      return { reason: `${node.name || node.kind}: graph is not a plain chain` };
    }
    layers.push(encodeNode(node));
  }
  if (!layers.some((l) => l.kind === 'dense' || l.kind === 'conv2d')) {
    return { reason: 'no parameterized layers to export' };
  }
  return {
    doc: { name: model.name, input_shape: [...model.inputShape], layers },
  };
}

function encodeNode(node: GraphNode): InterchangeLayer {
  switch (node.kind) {
    case 'conv2d': {
      const layer: InterchangeLayer = {
        kind: 'conv2d',
        in_channels: node.inChannels,
        out_channels: node.outChannels,
        kernel_size: node.kernelSize,
        stride: node.stride,
        padding: node.padding,
        weights: Array.from(node.weights!),
      };
      if (node.bias) layer.bias = Array.from(node.bias);
      return layer;
    }
    case 'dense': {
      const layer: InterchangeLayer = {
        kind: 'dense',
        in_features: node.inFeatures,
        out_features: node.outFeatures,
        weights: Array.from(node.weights!),
      };
      if (node.bias) layer.bias = Array.from(node.bias);
      return layer;
    }
    case 'maxpool2d':
      return { kind: 'maxpool2d', kernel_size: node.kernelSize,
               stride: node.stride };
    case 'relu':
      return { kind: 'relu' };
    case 'flatten':
      return { kind: 'flatten' };
    default:
      throw new Error(`cannot encode node kind ${node.kind}`);
  }
}

export function datasetDocument(samples: Tensor[], labels: number[],
                                numClasses: number) {
  return {
    num_classes: numClasses,
    samples: samples.map((s, i) => ({
      input: Array.from(s.data),
      label: labels[i],
    })),
  };
}

export function statsDocument(stats: LayerStatsRecord[]) {
  return { layers: stats };
}
