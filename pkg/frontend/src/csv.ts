/**
 * Strict readers for the run artifacts this package plots.
 *
 * Both CSVs are plain comma-separated with a fixed header; cells are never
 * quoted. Schema violations raise listing the missing columns.
 */

import { readFileSync } from "node:fs";

export interface LeadTimeRow {
  lead_hours: number;
  auroc: number | null;
  auprc: number | null;
  tte_mae: number | null;
  n_pos: number;
  n_neg: number;
}

export interface ConflictRow {
  step: number;
  r_t: number;
  cosines: Record<string, number | null>;
}

export const METRICS_COLUMNS = ["lead_hours", "auroc", "auprc", "tte_mae", "n_pos", "n_neg"];

export const CONFLICT_PAIR_COLUMNS = [
  "cos_CA_TTE",
  "cos_CA_LAB",
  "cos_CA_ID",
  "cos_TTE_LAB",
  "cos_TTE_ID",
  "cos_LAB_ID",
];

export const CONFLICT_COLUMNS = ["step", "r_t", ...CONFLICT_PAIR_COLUMNS];

function parseTable(path: string, requiredColumns: string[]): Record<string, string>[] {
  const text = readFileSync(path, "utf8").trim();
  const lines = text.split(/\r?\n/);
  const header = lines[0].split(",");
  const missing = requiredColumns.filter((c) => !header.includes(c));
  if (missing.length > 0) {
    throw new Error(`${path}: schema mismatch, missing columns: ${missing.join(", ")}`);
  }
  return lines.slice(1).map((line) => {
    const cells = line.split(",");
    const row: Record<string, string> = {};
    header.forEach((name, i) => {
      row[name] = cells[i] ?? "";
    });
    return row;
  });
}

function numOrNull(cell: string): number | null {
  return cell === "" ? null : Number(cell);
}

/** Per-lead rows in file order; the trailing `time_avg` summary row is dropped. */
export function readMetricsCsv(path: string): LeadTimeRow[] {
  return parseTable(path, METRICS_COLUMNS)
    .filter((row) => row.lead_hours !== "time_avg")
    .map((row) => ({
      lead_hours: Number(row.lead_hours),
      auroc: numOrNull(row.auroc),
      auprc: numOrNull(row.auprc),
      tte_mae: numOrNull(row.tte_mae),
      n_pos: Number(row.n_pos),
      n_neg: Number(row.n_neg),
    }));
}

export function readConflictCsv(path: string): ConflictRow[] {
  return parseTable(path, CONFLICT_COLUMNS).map((row) => {
    const cosines: Record<string, number | null> = {};
    for (const pair of CONFLICT_PAIR_COLUMNS) {
      cosines[pair] = numOrNull(row[pair]);
    }
    return { step: Number(row.step), r_t: Number(row.r_t), cosines };
  });
}
