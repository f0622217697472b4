/** Minimal hand-rolled SVG chart primitives; no rendering dependencies. */

export interface Frame {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
}

export const DEFAULT_FRAME: Frame = {
  width: 860,
  height: 300,
  left: 60,
  right: 20,
  top: 28,
  bottom: 40,
};

export interface Scale {
  (value: number): number;
}

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function openSvg(frame: Frame, panels = 1): string[] {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${frame.width}" height="${frame.height * panels}" ` +
      `viewBox="0 0 ${frame.width} ${frame.height * panels}" font-family="sans-serif" font-size="11">`,
    `<rect width="100%" height="100%" fill="white"/>`,
  ];
}

export function closeSvg(parts: string[]): string {
  parts.push("</svg>");
  return parts.join("\n");
}

export function text(x: number, y: number, s: string, anchor = "middle", extra = ""): string {
  return `<text x="${x.toFixed(1)}" y="${y.toFixed(1)}" text-anchor="${anchor}" ${extra}>${s}</text>`;
}

export function line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1): string {
  return (
    `<line x1="${x1.toFixed(1)}" y1="${y1.toFixed(1)}" x2="${x2.toFixed(1)}" y2="${y2.toFixed(1)}" ` +
    `stroke="${stroke}" stroke-width="${width}"/>`
  );
}

export function rect(x: number, y: number, w: number, h: number, fill: string, opacity = 1): string {
  return (
    `<rect x="${x.toFixed(1)}" y="${y.toFixed(1)}" width="${w.toFixed(1)}" height="${h.toFixed(1)}" ` +
    `fill="${fill}" fill-opacity="${opacity}"/>`
  );
}

export function polyline(points: Array<[number, number]>, stroke: string, width = 1.5): string {
  const path = points.map(([x, y]) => `${x.toFixed(1)},${y.toFixed(1)}`).join(" ");
  return `<polyline points="${path}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`;
}

/** Horizontal axis with one tick label per category position. */
export function categoryAxis(
  frame: Frame,
  yBase: number,
  labels: string[],
  xOf: (index: number) => number,
): string[] {
  const parts = [line(frame.left, yBase, frame.width - frame.right, yBase, "#333")];
  labels.forEach((label, i) => {
    const x = xOf(i);
    parts.push(line(x, yBase, x, yBase + 4, "#333"));
    parts.push(text(x, yBase + 16, label));
  });
  return parts;
}

export function valueAxis(frame: Frame, yTop: number, yBase: number, scale: Scale, ticks: number[]): string[] {
  const x = frame.left;
  const parts = [line(x, yTop, x, yBase, "#333")];
  for (const tick of ticks) {
    const y = scale(tick);
    parts.push(line(x - 4, y, x, y, "#333"));
    parts.push(text(x - 8, y + 3.5, tick.toPrecision(3).replace(/\.?0+$/, ""), "end"));
    parts.push(line(x, y, frame.width - frame.right, y, "#eee"));
  }
  return parts;
}

export function niceTicks(lo: number, hi: number, count = 5): number[] {
  const span = hi - lo || 1;
  const rawStep = span / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const step = [1, 2, 2.5, 5, 10].map((m) => m * mag).find((s) => span / s <= count) ?? mag * 10;
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += step) {
    ticks.push(Number(v.toFixed(10)));
  }
  return ticks;
}
