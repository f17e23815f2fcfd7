#!/usr/bin/env node
/**
 * quantproxy-export --model <zoo-id|checkpoint> --samples <n> --out <dir>
 *                   [--stats-only] [--seed <n>]
 */

import { exportModel } from './exporter.js';
import { ZOO_IDS } from './zoo.js';

function usage(): never {
  console.error(
    'usage: quantproxy-export --model <id|path> --samples <n> --out <dir> ' +
    '[--stats-only] [--seed <n>]\n' +
    `zoo models: ${ZOO_IDS.join(', ')}`);
  process.exit(1);
}

function parseArgs(argv: string[]) {
  const opts: { model?: string; samples?: number; out?: string;
                statsOnly: boolean; seed: number } =
    { statsOnly: false, seed: 7 };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    switch (arg) {
      case '--model':
        opts.model = argv[++i];
        break;
      case '--samples':
        opts.samples = Number(argv[++i]);
        break;
      case '--out':
        opts.out = argv[++i];
        break;
      case '--seed':
        opts.seed = Number(argv[++i]);
        break;
      case '--stats-only':
        opts.statsOnly = true;
        break;
      default:
        console.error(`unknown argument ${arg}`);
        usage();
    }
  }
  if (!opts.model || !opts.out || opts.samples === undefined ||
      !Number.isFinite(opts.samples)) {
    usage();
  }
  return opts as { model: string; samples: number; out: string;
                   statsOnly: boolean; seed: number };
}

function main(): number {
  const opts = parseArgs(process.argv.slice(2));
  try {
    const manifest = exportModel({
      modelId: opts.model,
      sampleCount: opts.samples,
      outDir: opts.out,
      statsOnly: opts.statsOnly,
      seed: opts.seed,
    });
    console.log(`mode: ${manifest.mode}`);
    for (const entry of manifest.layer_map) {
      console.log(`  ${entry.source} -> layers[${entry.interchange_index}] (${entry.kind})`);
    }
    for (const skip of manifest.skipped_layers) {
      console.log(`  skipped ${skip.source}: ${skip.reason}`);
    }
    for (const [kind, file] of Object.entries(manifest.outputs)) {
      console.log(`${kind}: ${file}`);
    }
    return 0;
  } catch (err) {
    console.error(`export failed: ${(err as Error).message}`);
    return 2;
  }
}

process.exit(main());
