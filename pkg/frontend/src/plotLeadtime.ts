/**
 * Per-lead-time metric figure: AUROC bars (and a TTE-MAE panel when present),
 * with per-lead improvement shading against an optional baseline run —
 * green where the run improves on the baseline, red where it degrades.
 *
 * Usage: node plotLeadtime.js --metrics run/metrics.csv --out fig.svg
 *                             [--baseline base/metrics.csv]
 *
 * Every image gets a JSON sidecar (<out>.json) holding the exact numbers
 * drawn, so tests assert values rather than pixels. The script never
 * recomputes metrics; it is a pure view over the CSV.
 */

import { writeFileSync } from "node:fs";

import { LeadTimeRow, readMetricsCsv } from "./csv.js";
import {
  DEFAULT_FRAME,
  categoryAxis,
  closeSvg,
  line,
  linearScale,
  niceTicks,
  openSvg,
  rect,
  text,
  valueAxis,
} from "./svg.js";

export type ShadeSign = "green" | "red" | "none";

export interface LeadtimeSidecar {
  kind: "leadtime";
  leads: number[];
  auroc: Array<number | null>;
  tte_mae: Array<number | null>;
  baseline_auroc?: Array<number | null>;
  baseline_tte_mae?: Array<number | null>;
  auroc_delta?: Array<number | null>;
  auroc_shading?: ShadeSign[];
  tte_mae_delta?: Array<number | null>;
  tte_mae_shading?: ShadeSign[];
}

function deltas(
  run: Array<number | null>,
  base: Array<number | null>,
  improvesWhenHigher: boolean,
): { delta: Array<number | null>; shading: ShadeSign[] } {
  const delta = run.map((v, i) =>
    v === null || base[i] === null ? null : v - (base[i] as number),
  );
  const shading = delta.map<ShadeSign>((d) => {
    if (d === null || d === 0) return "none";
    const improved = improvesWhenHigher ? d > 0 : d < 0;
    return improved ? "green" : "red";
  });
  return { delta, shading };
}

function panel(
  parts: string[],
  offsetY: number,
  title: string,
  leads: number[],
  values: Array<number | null>,
  baseline: Array<number | null> | undefined,
  shading: ShadeSign[] | undefined,
): void {
  const frame = DEFAULT_FRAME;
  const finite = [...values, ...(baseline ?? [])].filter((v): v is number => v !== null);
  const hi = finite.length ? Math.max(...finite) : 1;
  const lo = Math.min(0, ...finite.filter((v) => v < 0));
  const yScale = linearScale(lo, hi * 1.05 || 1, offsetY + frame.height - frame.bottom, offsetY + frame.top);
  const yBase = yScale(0);
  const slot = (frame.width - frame.left - frame.right) / leads.length;
  const xOf = (i: number) => frame.left + slot * (i + 0.5);

  parts.push(text(frame.left, offsetY + 16, title, "start", 'font-size="13" font-weight="bold"'));
  parts.push(...valueAxis(frame, offsetY + frame.top, yBase, yScale, niceTicks(lo, hi * 1.05 || 1)));
  parts.push(...categoryAxis(frame, yBase, leads.map(String), xOf));
  parts.push(text(frame.width / 2, offsetY + frame.height - 8, "lead time (hours before event)"));

  values.forEach((value, i) => {
    if (value === null) return;
    const x = xOf(i) - slot * 0.35;
    const y = yScale(value);
    parts.push(rect(x, Math.min(y, yBase), slot * 0.7, Math.abs(yBase - y), "#4878a8"));
    if (baseline && baseline[i] !== null && shading) {
      const by = yScale(baseline[i] as number);
      if (shading[i] !== "none") {
        const color = shading[i] === "green" ? "#3a9e3a" : "#c23b3b";
        parts.push(rect(x, Math.min(y, by), slot * 0.7, Math.abs(by - y), color, 0.55));
      }
      parts.push(line(x - 2, by, x + slot * 0.7 + 2, by, "#222", 2));
    }
  });
}

export function buildLeadtimePlot(
  run: LeadTimeRow[],
  baseline?: LeadTimeRow[],
): { svg: string; sidecar: LeadtimeSidecar } {
  if (run.length === 0) {
    throw new Error("metrics CSV has no per-lead rows");
  }
  const leads = run.map((r) => r.lead_hours);
  if (baseline) {
    const baseLeads = baseline.map((r) => r.lead_hours);
    if (baseLeads.length !== leads.length || baseLeads.some((l, i) => l !== leads[i])) {
      throw new Error("baseline lead axis does not align with the run's lead axis");
    }
  }

  const sidecar: LeadtimeSidecar = {
    kind: "leadtime",
    leads,
    auroc: run.map((r) => r.auroc),
    tte_mae: run.map((r) => r.tte_mae),
  };
  let aurocShading: ShadeSign[] | undefined;
  let maeShading: ShadeSign[] | undefined;
  if (baseline) {
    sidecar.baseline_auroc = baseline.map((r) => r.auroc);
    sidecar.baseline_tte_mae = baseline.map((r) => r.tte_mae);
    const roc = deltas(sidecar.auroc, sidecar.baseline_auroc, true);
    sidecar.auroc_delta = roc.delta;
    sidecar.auroc_shading = aurocShading = roc.shading;
    const mae = deltas(sidecar.tte_mae, sidecar.baseline_tte_mae, false);
    sidecar.tte_mae_delta = mae.delta;
    sidecar.tte_mae_shading = maeShading = mae.shading;
  }

  const hasMae = sidecar.tte_mae.some((v) => v !== null);
  const parts = openSvg(DEFAULT_FRAME, hasMae ? 2 : 1);
  panel(parts, 0, "AUROC by lead time", leads, sidecar.auroc, sidecar.baseline_auroc, aurocShading);
  if (hasMae) {
    panel(
      parts,
      DEFAULT_FRAME.height,
      "TTE-MAE by lead time (hours)",
      leads,
      sidecar.tte_mae,
      sidecar.baseline_tte_mae,
      maeShading,
    );
  }
  return { svg: closeSvg(parts), sidecar };
}

export function plotLeadtime(metricsPath: string, outPath: string, baselinePath?: string): LeadtimeSidecar {
  const run = readMetricsCsv(metricsPath);
  const baseline = baselinePath ? readMetricsCsv(baselinePath) : undefined;
  const { svg, sidecar } = buildLeadtimePlot(run, baseline);
  writeFileSync(outPath, svg);
  writeFileSync(`${outPath}.json`, JSON.stringify(sidecar, null, 2) + "\n");
  return sidecar;
}

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || argv[i + 1] === undefined) {
      throw new Error(`malformed arguments near ${argv[i]}`);
    }
    args.set(argv[i].slice(2), argv[i + 1]);
  }
  return args;
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  const metrics = args.get("metrics");
  const out = args.get("out");
  if (!metrics || !out) {
    console.error("usage: plotLeadtime --metrics metrics.csv --out fig.svg [--baseline metrics.csv]");
    return 2;
  }
  plotLeadtime(metrics, out, args.get("baseline"));
  console.log(`wrote ${out} and ${out}.json`);
  return 0;
}

if (process.argv[1] && process.argv[1].endsWith("plotLeadtime.js")) {
  process.exit(main(process.argv.slice(2)));
}
