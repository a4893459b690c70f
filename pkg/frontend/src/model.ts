/** Pure view-model layer: turns gateway responses into render-ready data.
 *
 * Invariants enforced here:
 *  - no value is displayed that the gateway did not return;
 *  - every displayed charge equals the gateway's receipt field exactly.
 */

import type {
  AlertCard,
  BudgetSnapshot,
  EpochRecord,
  QueryResponse,
} from "./types.js";

// -- trend chart view-model --------------------------------------------

export interface ChartPoint {
  epoch: number;
  date: string;
  value: number;
}

export interface RefusalMarker {
  epoch: number;
  date: string;
  status: "refused" | "deleted";
}

export interface TrendView {
  kind: string;
  coarse: boolean; // CC/CT series render visually distinct from FC/FT
  points: ChartPoint[];
  markers: RefusalMarker[];
  totalCharged: number;
  queryId: string;
}

export function trendView(resp: QueryResponse): TrendView {
  const points: ChartPoint[] = [];
  const markers: RefusalMarker[] = [];
  for (const rec of resp.series) {
    if (rec.status === "ok" && rec.value !== null) {
      points.push({ epoch: rec.epoch, date: rec.date, value: rec.value });
    } else if (rec.status === "refused" || rec.status === "deleted") {
      markers.push({ epoch: rec.epoch, date: rec.date, status: rec.status });
    }
  }
  return {
    kind: resp.kind,
    coarse: resp.kind.startsWith("C"),
    points,
    markers,
    totalCharged: resp.total_charged,
    queryId: resp.query_id,
  };
}

export function argmaxDate(view: TrendView): string | null {
  if (view.points.length === 0) return null;
  let best = view.points[0]!;
  for (const p of view.points) {
    if (p.value > best.value) best = p;
  }
  return best.date;
}

// -- budget gauge view-model -------------------------------------------

export interface GaugeRow {
  epoch: number;
  remaining: number;
  max: number;
  fraction: number; // remaining / eps_f_max, for bar width
  deleted: boolean;
}

export interface GaugeView {
  epsFMax: number;
  coarseCharge: { epsP: number; deltaP: number } | null;
  rows: GaugeRow[];
  stale: boolean;
}

export function gaugeView(snap: BudgetSnapshot, stale = false): GaugeView {
  const rows: GaugeRow[] = Object.entries(snap.epochs)
    .map(([epoch, b]) => ({
      epoch: Number(epoch),
      remaining: b.remaining,
      max: snap.eps_f_max,
      fraction: snap.eps_f_max > 0 ? b.remaining / snap.eps_f_max : 0,
      deleted: b.deleted,
    }))
    .sort((a, b) => a.epoch - b.epoch);
  return {
    epsFMax: snap.eps_f_max,
    coarseCharge: snap.coarse_charge
      ? { epsP: snap.coarse_charge[0], deltaP: snap.coarse_charge[1] }
      : null,
    rows,
    stale,
  };
}

/** Remaining budget for one epoch; untouched epochs sit at eps_f_max. */
export function remainingFor(snap: BudgetSnapshot, epoch: number): number {
  const entry = snap.epochs[String(epoch)];
  return entry ? entry.remaining : snap.eps_f_max;
}

/** Per-epoch budget decrements between two snapshots (old minus new). */
export function gaugeDecrements(
  before: BudgetSnapshot,
  after: BudgetSnapshot,
): Map<number, number> {
  const epochs = new Set([
    ...Object.keys(before.epochs),
    ...Object.keys(after.epochs),
  ]);
  const out = new Map<number, number>();
  for (const e of epochs) {
    const epoch = Number(e);
    const delta = remainingFor(before, epoch) - remainingFor(after, epoch);
    if (delta !== 0) out.set(epoch, delta);
  }
  return out;
}

/** Receipts (epoch -> eps_charged) from one query response, zeros dropped. */
export function receipts(resp: QueryResponse): Map<number, number> {
  const out = new Map<number, number>();
  for (const rec of resp.series) {
    if (rec.eps_charged !== 0) out.set(rec.epoch, rec.eps_charged);
  }
  return out;
}

// -- alert cards --------------------------------------------------------

export interface AlertCardView {
  id: string;
  label: string;
  status: "armed" | "fired";
  chargeText: string; // exact receipt: "0" while armed
  firedEpochs: number[];
  epochsWatched: number[];
}

export function alertCardView(card: AlertCard): AlertCardView {
  return {
    id: card.id,
    label:
      (card.text ?? `vector query`) +
      ` (t=${card.threshold ?? "?"}, r=${card.radius})`,
    status: card.status,
    // fired alerts show the charge receipt; armed alerts show zero spend
    chargeText: card.status === "fired" ? `ε=${card.eps_charged}` : "ε=0",
    firedEpochs: card.fired_epochs ?? [],
    epochsWatched: card.epochs_watched,
  };
}
