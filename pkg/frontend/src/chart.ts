/** Dependency-free SVG line chart for trend series.
 *
 * Renders to an SVG string so the geometry is unit-testable without a DOM:
 * one circle per plotted epoch, one cross marker per refused/deleted epoch.
 */

import type { TrendView } from "./model.js";

export interface ChartOptions {
  width?: number;
  height?: number;
  padding?: number;
}

export interface ChartGeometry {
  circles: { x: number; y: number; date: string; value: number }[];
  crosses: { x: number; date: string; status: string }[];
  path: string;
}

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export function chartGeometry(
  view: TrendView,
  opts: ChartOptions = {},
): ChartGeometry {
  const width = opts.width ?? 640;
  const height = opts.height ?? 240;
  const pad = opts.padding ?? 32;
  const epochs = [
    ...view.points.map((p) => p.epoch),
    ...view.markers.map((m) => m.epoch),
  ];
  if (epochs.length === 0) return { circles: [], crosses: [], path: "" };
  const e0 = Math.min(...epochs);
  const e1 = Math.max(...epochs);
  const values = view.points.map((p) => p.value);
  const vMax = values.length ? Math.max(...values, 1) : 1;
  const sx = (e: number) =>
    e1 === e0 ? width / 2 : pad + ((e - e0) / (e1 - e0)) * (width - 2 * pad);
  const sy = (v: number) => height - pad - (v / vMax) * (height - 2 * pad);

  const circles = view.points.map((p) => ({
    x: sx(p.epoch),
    y: sy(p.value),
    date: p.date,
    value: p.value,
  }));
  const crosses = view.markers.map((m) => ({
    x: sx(m.epoch),
    date: m.date,
    status: m.status,
  }));
  const path = circles
    .map((c, i) => `${i === 0 ? "M" : "L"}${c.x.toFixed(1)},${c.y.toFixed(1)}`)
    .join(" ");
  return { circles, crosses, path };
}

export function renderChartSvg(view: TrendView, opts: ChartOptions = {}): string {
  const width = opts.width ?? 640;
  const height = opts.height ?? 240;
  const geo = chartGeometry(view, opts);
  const cls = view.coarse ? "series-coarse" : "series-fine";
  const dash = view.coarse ? ' stroke-dasharray="6 3"' : "";
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" class="trend-chart">`,
  ];
  if (geo.path) {
    parts.push(
      `<path class="${cls}" d="${geo.path}" fill="none" stroke-width="1.5"${dash}/>`,
    );
  }
  for (const c of geo.circles) {
    parts.push(
      `<circle class="point ${cls}" cx="${c.x.toFixed(1)}" cy="${c.y.toFixed(1)}" r="3">` +
        `<title>${esc(c.date)}: ${c.value}</title></circle>`,
    );
  }
  for (const m of geo.crosses) {
    const y = height - 16;
    parts.push(
      `<text class="marker marker-${m.status}" x="${m.x.toFixed(1)}" y="${y}" text-anchor="middle">` +
        `&#215;<title>${esc(m.date)}: ${esc(m.status)}</title></text>`,
    );
  }
  if (geo.circles.length === 0 && geo.crosses.length === 0) {
    parts.push(
      `<text class="empty" x="${width / 2}" y="${height / 2}" text-anchor="middle">no data</text>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}
