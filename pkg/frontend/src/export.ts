// Tie it together: dataset in, embedding file out.

import { readFileSync } from "node:fs";

import { parseDataset } from "./dataset.js";
import { DEFAULT_CONFIG, EncoderConfig, embedExample } from "./encoder.js";
import { ExampleEmbedding, writeEmbeddingFile } from "./format.js";

export interface ExportConfig extends EncoderConfig {
  input: string;
  output: string;
}

export function defaultExportConfig(input: string, output: string): ExportConfig {
  return { ...DEFAULT_CONFIG, input, output };
}

/** Read the dataset, embed every example, write the file atomically. */
export function exportEmbeddings(cfg: ExportConfig): { examples: number; words: number } {
  const text = readFileSync(cfg.input, "utf8");
  const points = parseDataset(text, cfg.input);
  const examples: ExampleEmbedding[] = [];
  let words = 0;
  for (const p of points) {
    const rows = embedExample(p.id, p.tokens, cfg);
    if (rows.length !== p.tokens.length) {
      throw new Error(`example ${p.id}: ${rows.length} vectors for ${p.tokens.length} words`);
    }
    words += rows.length;
    examples.push({ id: p.id, rows });
  }
  writeEmbeddingFile(cfg.output, cfg.dim, examples);
  return { examples: examples.length, words };
}
