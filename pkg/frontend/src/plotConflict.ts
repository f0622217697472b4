/**
 * Conflict-rate figure: the raw per-step conflict rate with its centered
 * moving average, plus a lower panel with the six pairwise task cosines.
 *
 * Usage: node plotConflict.js --conflict run/conflict.csv --out fig.svg
 *                             [--window 25]
 *
 * Emits <out>.json with the exact series drawn; never recomputes telemetry.
 */

import { writeFileSync } from "node:fs";

import { CONFLICT_PAIR_COLUMNS, ConflictRow, readConflictCsv } from "./csv.js";
import { movingAverage } from "./movingAverage.js";
import {
  DEFAULT_FRAME,
  closeSvg,
  line,
  linearScale,
  niceTicks,
  openSvg,
  polyline,
  text,
  valueAxis,
} from "./svg.js";

const PAIR_COLORS: Record<string, string> = {
  cos_CA_TTE: "#4878a8",
  cos_CA_LAB: "#e0882f",
  cos_CA_ID: "#3a9e3a",
  cos_TTE_LAB: "#c23b3b",
  cos_TTE_ID: "#8864b0",
  cos_LAB_ID: "#757575",
};

export interface ConflictSidecar {
  kind: "conflict";
  window: number;
  steps: number[];
  r_t: number[];
  moving_avg: number[];
  pairwise: Record<string, Array<number | null>>;
}

function seriesPanel(
  parts: string[],
  offsetY: number,
  title: string,
  steps: number[],
  draw: (xOf: (step: number) => number, yScale: (v: number) => number) => void,
  lo: number,
  hi: number,
): void {
  const frame = DEFAULT_FRAME;
  const yScale = linearScale(lo, hi, offsetY + frame.height - frame.bottom, offsetY + frame.top);
  const xOf = linearScale(steps[0], steps[steps.length - 1], frame.left, frame.width - frame.right);
  parts.push(text(frame.left, offsetY + 16, title, "start", 'font-size="13" font-weight="bold"'));
  parts.push(...valueAxis(frame, offsetY + frame.top, offsetY + frame.height - frame.bottom, yScale, niceTicks(lo, hi)));
  parts.push(
    line(frame.left, offsetY + frame.height - frame.bottom, frame.width - frame.right, offsetY + frame.height - frame.bottom, "#333"),
  );
  parts.push(text(frame.width / 2, offsetY + frame.height - 8, "training step"));
  draw(xOf, yScale);
}

export function buildConflictPlot(rows: ConflictRow[], window: number): { svg: string; sidecar: ConflictSidecar } {
  if (rows.length === 0) {
    throw new Error("conflict CSV has no telemetry rows");
  }
  const steps = rows.map((r) => r.step);
  const rt = rows.map((r) => r.r_t);
  const avg = movingAverage(rt, window);
  const sidecar: ConflictSidecar = {
    kind: "conflict",
    window,
    steps,
    r_t: rt,
    moving_avg: avg,
    pairwise: Object.fromEntries(
      CONFLICT_PAIR_COLUMNS.map((pair) => [pair, rows.map((r) => r.cosines[pair])]),
    ),
  };

  const parts = openSvg(DEFAULT_FRAME, 2);
  seriesPanel(parts, 0, `conflict rate per step (moving average, window ${window})`, steps, (xOf, yScale) => {
    parts.push(polyline(steps.map((s, i) => [xOf(s), yScale(rt[i])]), "#9dbbd8", 1));
    parts.push(polyline(steps.map((s, i) => [xOf(s), yScale(avg[i])]), "#e0882f", 2));
  }, 0, 1);

  seriesPanel(parts, DEFAULT_FRAME.height, "pairwise task gradient cosines", steps, (xOf, yScale) => {
    for (const pair of CONFLICT_PAIR_COLUMNS) {
      const pts: Array<[number, number]> = [];
      rows.forEach((row, i) => {
        const v = row.cosines[pair];
        if (v !== null) pts.push([xOf(steps[i]), yScale(v)]);
      });
      if (pts.length > 0) {
        parts.push(polyline(pts, PAIR_COLORS[pair], 1));
      }
    }
    CONFLICT_PAIR_COLUMNS.forEach((pair, i) => {
      const x = DEFAULT_FRAME.left + 8 + i * 130;
      parts.push(text(x, DEFAULT_FRAME.height + 26, pair, "start", `fill="${PAIR_COLORS[pair]}"`));
    });
  }, -1, 1);

  return { svg: closeSvg(parts), sidecar };
}

export function plotConflict(conflictPath: string, outPath: string, window: number): ConflictSidecar {
  const rows = readConflictCsv(conflictPath);
  const { svg, sidecar } = buildConflictPlot(rows, window);
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
  const conflict = args.get("conflict");
  const out = args.get("out");
  if (!conflict || !out) {
    console.error("usage: plotConflict --conflict conflict.csv --out fig.svg [--window 25]");
    return 2;
  }
  plotConflict(conflict, out, Number(args.get("window") ?? 25));
  console.log(`wrote ${out} and ${out}.json`);
  return 0;
}

if (process.argv[1] && process.argv[1].endsWith("plotConflict.js")) {
  process.exit(main(process.argv.slice(2)));
}
