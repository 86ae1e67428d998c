/**
 * Parsing and validation of the simulator's run artifacts.
 *
 * The diagnostics CSV schema is fixed by the solver:
 *   t,Hs_f,Hs_g,taylor_min,separation_min,mean_f,total_density,dt,step_status
 * Figures are pure functions of these files; nothing is recomputed.
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export const CSV_COLUMNS = [
  "t",
  "Hs_f",
  "Hs_g",
  "taylor_min",
  "separation_min",
  "mean_f",
  "total_density",
  "dt",
  "step_status",
] as const;

export interface DiagnosticsRow {
  t: number;
  Hs_f: number;
  Hs_g: number;
  taylor_min: number;
  separation_min: number;
  mean_f: number;
  total_density: number;
  dt: number;
  step_status: string;
}

export interface DiagnosticsTable {
  rows: DiagnosticsRow[];
  path: string;
}

export class ArtifactError extends Error {}

export function parseDiagnostics(path: string): DiagnosticsTable {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch (err) {
    throw new ArtifactError(`cannot read diagnostics CSV at ${path}: ${err}`);
  }
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new ArtifactError(
      `malformed CSV at ${path}: ${first.message} (row ${first.row})`,
    );
  }
  const fields = parsed.meta.fields ?? [];
  const missing = CSV_COLUMNS.filter((c) => !fields.includes(c));
  if (missing.length > 0) {
    throw new ArtifactError(
      `diagnostics CSV at ${path} is missing columns: ${missing.join(", ")}`,
    );
  }
  const rows: DiagnosticsRow[] = parsed.data.map((raw, i) => {
    const num = (key: string): number => {
      const v = Number(raw[key]);
      if (!Number.isFinite(v)) {
        throw new ArtifactError(
          `non-numeric ${key} in row ${i + 1} of ${path}: ${raw[key]}`,
        );
      }
      return v;
    };
    return {
      t: num("t"),
      Hs_f: num("Hs_f"),
      Hs_g: num("Hs_g"),
      taylor_min: num("taylor_min"),
      separation_min: raw["separation_min"] === "inf"
        ? Infinity
        : num("separation_min"),
      mean_f: num("mean_f"),
      total_density: num("total_density"),
      dt: num("dt"),
      step_status: raw["step_status"] ?? "",
    };
  });
  for (let i = 1; i < rows.length; i++) {
    if (rows[i].t < rows[i - 1].t) {
      throw new ArtifactError(
        `time column is not monotone at row ${i + 1} of ${path}`,
      );
    }
  }
  if (rows.length === 0) {
    throw new ArtifactError(`diagnostics CSV at ${path} has no data rows`);
  }
  return { rows, path };
}

export interface RunSummary {
  fit_window?: [number, number];
  deltas_f?: number[];
  deltas_g?: number[];
  fitted_slope?: number;
  [key: string]: unknown;
}

export function readSummary(path: string): RunSummary {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch (err) {
    throw new ArtifactError(`cannot read summary JSON at ${path}: ${err}`);
  }
  try {
    return JSON.parse(text) as RunSummary;
  } catch (err) {
    throw new ArtifactError(`summary at ${path} is not valid JSON: ${err}`);
  }
}
