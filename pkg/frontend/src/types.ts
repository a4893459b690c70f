/** Wire types mirroring the gateway's HTTP/JSON API. */

export type QueryKind = "FC" | "FT" | "CC" | "CT";

export type EpochStatus = "ok" | "refused" | "deleted";

export interface EpochRecord {
  epoch: number;
  date: string; // ISO day, e.g. "2026-02-16"
  status: EpochStatus;
  value: number | null;
  eps_charged: number;
  cached?: boolean;
  detail?: string;
}

export interface QueryResponse {
  query_id: string;
  kind: QueryKind;
  radius: number;
  radius_l2: number;
  threshold: number | null;
  eps: number | null;
  series: EpochRecord[];
  total_charged: number;
}

export interface QueryBody {
  kind: string;
  text?: string;
  vector?: number[];
  radius: number;
  epochs: number[] | { from: number; to: number };
  threshold?: number | null;
  eps?: number | null;
}

export interface EpochBudget {
  remaining: number;
  deleted: boolean;
}

export interface BudgetSnapshot {
  eps_f_max: number;
  coarse_charge: [number, number] | null;
  epochs: Record<string, EpochBudget>;
  store_sizes?: Record<string, number>;
  fine_present?: Record<string, boolean>;
}

export interface AlertCard {
  id: string;
  kind: "FT";
  text: string | null;
  threshold: number | null;
  radius: number;
  epochs_watched: number[];
  status: "armed" | "fired";
  eps_charged: number;
  fired_epochs?: number[];
}

export interface AlertsResponse {
  alerts: AlertCard[];
}
