import { execFileSync } from 'child_process';
import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { beforeAll, describe, expect, it } from 'vitest';
import { exportModel } from '../src/exporter.js';

const REPO_ROOT = path.resolve(__dirname, '..', '..');
const CACHE = path.join(os.tmpdir(), 'qp-exporter-test-zoo');

function tmpdir(name: string): string {
  const dir = path.join(os.tmpdir(), `qp-export-${name}-${process.pid}`);
  fs.rmSync(dir, { recursive: true, force: true });
  return dir;
}

function primaryCli(args: string[]): { status: number; stdout: string } {
  try {
    const stdout = execFileSync(
      'python3', ['-m', 'quantproxy.cli', ...args],
      { env: { ...process.env, PYTHONPATH: path.join(REPO_ROOT, 'src') },
        encoding: 'utf-8' });
    return { status: 0, stdout };
  } catch (err: any) {
    return { status: err.status ?? 1, stdout: String(err.stdout ?? '') };
  }
}

describe('full export of a sequential model', () => {
  const out = tmpdir('cnn');
  let manifest: ReturnType<typeof exportModel>;

  beforeAll(() => {
    manifest = exportModel({ modelId: 'zoo:cnn-small', sampleCount: 16,
                             outDir: out, cacheDir: CACHE });
  });

  it('produces a full-mode manifest with a complete layer map', () => {
    expect(manifest.mode).toBe('full');
    expect(manifest.skipped_layers).toEqual([]);
    expect(manifest.sample_count).toBe(16);
    expect(manifest.layer_map.map((l) => l.kind)).toEqual(
      ['conv2d', 'maxpool2d', 'conv2d', 'flatten', 'dense']);
  });

  it('exported files load in the engine CLI with exit 0', () => {
    const { status } = primaryCli(
      ['score', '--proxy', 'w_l2', '--model', manifest.outputs.model!,
       '--calib', manifest.outputs.dataset!]);
    expect(status).toBe(0);
  });

  it('engine can run the whole fitness pipeline on the export', () => {
    const { status, stdout } = primaryCli(
      ['--format', 'machine', 'eval-proxy', '--proxy', 'w_l2 * a_entropy',
       '--model', manifest.outputs.model!,
       '--calib', manifest.outputs.dataset!,
       '--target-compression', '0.8']);
    expect(status).toBe(0);
    const records = stdout.trim().split('\n').map((l) => JSON.parse(l));
    const evalRecord = records.find((r) => r.record === 'eval_proxy');
    expect(evalRecord.phi).not.toBe('-inf');
  });

  it('layer statistics match the engine to 1e-6 per field', () => {
    const statsOut = tmpdir('cnn-stats');
    const statsManifest = exportModel({
      modelId: 'zoo:cnn-small', sampleCount: 16, outDir: statsOut,
      statsOnly: true, cacheDir: CACHE });
    const ours = JSON.parse(
      fs.readFileSync(statsManifest.outputs.stats!, 'utf-8')).layers;
    const { status, stdout } = primaryCli(
      ['--format', 'machine', 'score', '--dump-stats',
       '--model', manifest.outputs.model!,
       '--calib', manifest.outputs.dataset!]);
    expect(status).toBe(0);
    const theirs = stdout.trim().split('\n').map((l) => JSON.parse(l));
    expect(theirs.length).toBe(ours.length);
    for (let i = 0; i < ours.length; i++) {
      for (const [key, value] of Object.entries(ours[i])) {
        if (key === 'layer_class') {
          expect(theirs[i][key]).toBe(value);
        } else {
          expect(Math.abs((theirs[i][key] as number) - (value as number)))
            .toBeLessThanOrEqual(1e-6);
        }
      }
    }
  });

  it('stats file is accepted by the engine score --stats path', () => {
    const statsOut = tmpdir('cnn-stats2');
    const statsManifest = exportModel({
      modelId: 'zoo:cnn-small', sampleCount: 16, outDir: statsOut,
      statsOnly: true, cacheDir: CACHE });
    const { status } = primaryCli(
      ['score', '--proxy', 'a_entropy * depth',
       '--stats', statsManifest.outputs.stats!]);
    expect(status).toBe(0);
  });
});

describe('mlp export', () => {
  it('round-trips through the engine', () => {
    const out = tmpdir('mlp');
    const manifest = exportModel({ modelId: 'zoo:mlp-tiny', sampleCount: 8,
                                   outDir: out, cacheDir: CACHE });
    expect(manifest.mode).toBe('full');
    const { status } = primaryCli(
      ['score', '--proxy', 'depth', '--model', manifest.outputs.model!,
       '--calib', manifest.outputs.dataset!]);
    expect(status).toBe(0);
  });
});

describe('stats-only fallback for residual topology', () => {
  it('exports statistics and lists the skipped junction', () => {
    const out = tmpdir('res');
    const manifest = exportModel({ modelId: 'zoo:resnet-toy', sampleCount: 8,
                                   outDir: out, cacheDir: CACHE });
    expect(manifest.mode).toBe('stats-only');
    expect(manifest.outputs.model).toBeUndefined();
    expect(manifest.outputs.stats).toBeDefined();
    expect(manifest.skipped_layers.some(
      (s) => s.reason.includes('no interchange equivalent'))).toBe(true);
    const doc = JSON.parse(fs.readFileSync(manifest.outputs.stats!, 'utf-8'));
    expect(doc.layers.length).toBe(3);
    const { status } = primaryCli(
      ['allocate', '--proxy', 'w_l2', '--stats', manifest.outputs.stats!,
       '--target-compression', '0.85']);
    expect(status).toBe(0);
  });
});

describe('input validation', () => {
  it('rejects a zero sample count', () => {
    expect(() => exportModel({ modelId: 'zoo:mlp-tiny', sampleCount: 0,
                               outDir: tmpdir('bad'), cacheDir: CACHE }))
      .toThrow(/sample count/);
  });

  it('rejects unknown zoo ids', () => {
    expect(() => exportModel({ modelId: 'zoo:nope', sampleCount: 4,
                               outDir: tmpdir('bad2'), cacheDir: CACHE }))
      .toThrow(/unknown zoo model/);
  });

  it('rejects missing checkpoint paths', () => {
    expect(() => exportModel({ modelId: '/no/such/model.json', sampleCount: 4,
                               outDir: tmpdir('bad3'), cacheDir: CACHE }))
      .toThrow(/not found/);
  });
});

describe('determinism', () => {
  it('same seed gives identical exports', () => {
    const a = tmpdir('det-a');
    const b = tmpdir('det-b');
    exportModel({ modelId: 'zoo:cnn-small', sampleCount: 8, outDir: a,
                  seed: 3, cacheDir: CACHE });
    exportModel({ modelId: 'zoo:cnn-small', sampleCount: 8, outDir: b,
                  seed: 3, cacheDir: CACHE });
    for (const name of ['model.json', 'calib.json']) {
      expect(fs.readFileSync(path.join(a, name), 'utf-8'))
        .toBe(fs.readFileSync(path.join(b, name), 'utf-8'));
    }
  });
});
