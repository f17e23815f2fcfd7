/**
 * Minimal float64 tensor: flat buffer + shape, row-major.
 *
 * The exporter needs exact, dependency-free arithmetic that reproduces the
 * engine's float64 forward pass, not a training framework.
 */

export interface Tensor {
  data: Float64Array;
  shape: number[];
}

export function zeros(shape: number[]): Tensor {
  return { data: new Float64Array(shape.reduce((a, b) => a * b, 1)), shape: [...shape] };
}

export function fromArray(values: ArrayLike<number>, shape: number[]): Tensor {
  const size = shape.reduce((a, b) => a * b, 1);
  if (values.length !== size) {
    throw new Error(`tensor data length ${values.length} does not match shape [${shape}]`);
  }
  return { data: Float64Array.from(values), shape: [...shape] };
}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Deterministic PRNG (mulberry32) so zoo checkpoints are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Approximately normal draws via the central limit trick (12 uniforms). */
export function gaussian(rand: () => number): number {
  let total = 0;
  for (let i = 0; i < 12; i++) total += rand();
  return total - 6.0;
}
