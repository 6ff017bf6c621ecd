import { readFileSync } from "fs";

export interface Table {
  columns: string[];
  rows: number[][];
}

export class SchemaError extends Error {}

/** Parse a numeric CSV with a header row (the simulator's output format). */
export function readCsv(path: string): Table {
  const text = readFileSync(path, "utf8");
  const lines = text.split(/\r?\n/).filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    throw new SchemaError(`${path}: empty file`);
  }
  const columns = lines[0].split(",").map((c) => c.trim());
  const rows = lines.slice(1).map((line) => line.split(",").map(Number));
  return { columns, rows };
}

/** Column accessor; missing columns raise a SchemaError naming them. */
export function requireColumns(table: Table, names: string[], path = "csv"):
    Map<string, number[]> {
  const missing = names.filter((n) => !table.columns.includes(n));
  if (missing.length > 0) {
    throw new SchemaError(
      `${path}: missing required columns: ${missing.join(", ")}`);
  }
  const out = new Map<string, number[]>();
  for (const name of names) {
    const idx = table.columns.indexOf(name);
    out.set(name, table.rows.map((r) => r[idx]));
  }
  return out;
}
