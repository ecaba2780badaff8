// Parsing for the core's line-delimited dialogue dataset format.

export interface Utterance {
  speaker: string;
  tokens: string[];
}

export interface DataPoint {
  id: string;
  tokens: string[]; // flattened over utterances, in order
}

/** Parse a JSONL dataset file's contents into (id, flat token list) pairs. */
export function parseDataset(text: string, path = "<dataset>"): DataPoint[] {
  const points: DataPoint[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") continue;
    let rec: unknown;
    try {
      rec = JSON.parse(line);
    } catch (e) {
      throw new Error(`${path}:${i + 1}: not valid JSON`);
    }
    const obj = rec as { id?: unknown; utterances?: unknown };
    if (typeof obj.id !== "string" || !Array.isArray(obj.utterances)) {
      throw new Error(`${path}:${i + 1}: record needs string "id" and array "utterances"`);
    }
    const tokens: string[] = [];
    for (const u of obj.utterances as Utterance[]) {
      if (!Array.isArray(u.tokens) || u.tokens.some((t) => typeof t !== "string")) {
        throw new Error(`${path}:${i + 1}: utterance tokens must be strings`);
      }
      tokens.push(...u.tokens);
    }
    if (tokens.length === 0) {
      throw new Error(`${path}:${i + 1}: example ${obj.id} has no tokens`);
    }
    points.push({ id: obj.id, tokens });
  }
  return points;
}
