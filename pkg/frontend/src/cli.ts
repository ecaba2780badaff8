#!/usr/bin/env node
// embed-export --input data.jsonl --output embeddings.txt [--dim 1024]
//              [--max-subwords 256] [--seed 0] [--layer -1]

import { defaultExportConfig, exportEmbeddings } from "./export.js";

function usage(): never {
  console.error(
    "usage: embed-export --input <dataset.jsonl> --output <embeddings.txt>\n" +
      "       [--dim N] [--max-subwords N] [--seed N] [--layer N]",
  );
  process.exit(2);
}

function main(argv: string[]): number {
  const opts: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) usage();
    opts[flag.slice(2)] = value;
  }
  const known = new Set(["input", "output", "dim", "max-subwords", "seed", "layer"]);
  for (const k of Object.keys(opts)) {
    if (!known.has(k)) usage();
  }
  if (!opts.input || !opts.output) usage();

  const cfg = defaultExportConfig(opts.input, opts.output);
  if (opts.dim !== undefined) cfg.dim = parseInt(opts.dim, 10);
  if (opts["max-subwords"] !== undefined) cfg.maxSubwords = parseInt(opts["max-subwords"], 10);
  if (opts.seed !== undefined) cfg.seed = parseInt(opts.seed, 10);
  if (opts.layer !== undefined) cfg.layer = parseInt(opts.layer, 10);
  if (!Number.isInteger(cfg.dim) || cfg.dim < 1) usage();

  try {
    const { examples, words } = exportEmbeddings(cfg);
    console.log(`wrote ${examples} examples (${words} words, dim ${cfg.dim}) to ${cfg.output}`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
