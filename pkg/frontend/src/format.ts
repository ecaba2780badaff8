// The precomputed-embedding file format the core consumes:
//   line 1: "dim=<d> count=<n>"
//   then per example: one id line, then one row of <d> floats per word.

import { mkdtempSync, renameSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";

export interface ExampleEmbedding {
  id: string;
  rows: Float64Array[];
}

function formatFloat(x: number): string {
  // shortest representation that round-trips a float64
  return Object.is(x, -0) ? "-0.0" : String(x);
}

export function renderFile(dim: number, examples: ExampleEmbedding[]): string {
  const lines: string[] = [`dim=${dim} count=${examples.length}`];
  for (const ex of examples) {
    lines.push(ex.id);
    for (const row of ex.rows) {
      if (row.length !== dim) {
        throw new Error(`example ${ex.id}: row has ${row.length} values, expected ${dim}`);
      }
      lines.push(Array.from(row, formatFloat).join(" "));
    }
  }
  return lines.join("\n") + "\n";
}

/** Write atomically: render to a temp file, then rename into place. */
export function writeEmbeddingFile(path: string, dim: number, examples: ExampleEmbedding[]): void {
  const text = renderFile(dim, examples);
  const dir = mkdtempSync(join(tmpdir(), "embed-export-"));
  const tmp = join(dir, "out.txt");
  try {
    writeFileSync(tmp, text, "utf8");
    renameSync(tmp, path);
  } catch (err) {
    // rename across filesystems is not atomic; fall back to a sibling temp file
    const sibling = join(dirname(path), `.embed-export-tmp-${process.pid}`);
    writeFileSync(sibling, text, "utf8");
    renameSync(sibling, path);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Parse the format back (used for round-trip checks). */
export function parseEmbeddingFile(text: string): { dim: number; examples: ExampleEmbedding[] } {
  const lines = text.split("\n").filter((l) => l.trim() !== "");
  const m = /^dim=(\d+) count=(\d+)$/.exec(lines[0] ?? "");
  if (!m) throw new Error(`bad header: ${lines[0]}`);
  const dim = parseInt(m[1], 10);
  const count = parseInt(m[2], 10);
  const examples: ExampleEmbedding[] = [];
  let current: ExampleEmbedding | null = null;
  for (const line of lines.slice(1)) {
    const parts = line.trim().split(/\s+/);
    const values = parts.length === dim ? parts.map(Number) : null;
    if (values !== null && values.every((v) => Number.isFinite(v))) {
      if (current === null) throw new Error("embedding row before any example id");
      current.rows.push(Float64Array.from(values));
    } else {
      if (current !== null) examples.push(current);
      current = { id: line, rows: [] };
    }
  }
  if (current !== null) examples.push(current);
  if (examples.length !== count) {
    throw new Error(`header says count=${count} but found ${examples.length} examples`);
  }
  return { dim, examples };
}
