/** Scripted in-memory gateway: a FetchLike that mimics the HTTP API's
 * budget/receipt semantics so console behavior can be tested end to end
 * without a live server.
 */

import type { FetchLike } from "../src/api.js";
import type {
  AlertCard,
  EpochRecord,
  QueryBody,
  QueryResponse,
} from "../src/types.js";

export interface FixtureEpoch {
  count: number; // plaintext matching count this epoch reports
}

export class ScriptedGateway {
  readonly epsFMax: number;
  readonly remaining = new Map<number, number>();
  readonly deleted = new Set<number>();
  readonly epochs: Map<number, FixtureEpoch>;
  readonly alerts = new Map<string, AlertCard>();
  readonly trends = new Map<string, QueryResponse>();
  coarseCharge: [number, number] | null = [2.0, 1e-5];
  private nextId = 1;

  constructor(epsFMax: number, counts: Record<number, number>) {
    this.epsFMax = epsFMax;
    this.epochs = new Map(
      Object.entries(counts).map(([e, count]) => [Number(e), { count }]),
    );
  }

  private remainingFor(epoch: number): number {
    return this.remaining.get(epoch) ?? this.epsFMax;
  }

  private charge(epoch: number, eps: number): number {
    let rem = this.remainingFor(epoch) - eps;
    if (Math.abs(rem) < 1e-9) rem = 0;
    this.remaining.set(epoch, rem);
    if (rem === 0) this.deleted.add(epoch);
    return rem;
  }

  private epochList(body: QueryBody): number[] {
    if (Array.isArray(body.epochs)) return body.epochs;
    const out: number[] = [];
    for (let e = body.epochs.from; e <= body.epochs.to; e++) out.push(e);
    return out;
  }

  private runEpoch(body: QueryBody, epoch: number): EpochRecord {
    const kind = body.kind.toUpperCase();
    const date = `day-${epoch}`;
    const count = this.epochs.get(epoch)?.count ?? 0;
    if (kind === "CC") {
      return { epoch, date, status: "ok", value: count, eps_charged: 0 };
    }
    if (kind === "CT") {
      const v = count > (body.threshold ?? 0) ? 1 : 0;
      return { epoch, date, status: "ok", value: v, eps_charged: 0 };
    }
    if (this.deleted.has(epoch)) {
      return { epoch, date, status: "deleted", value: null, eps_charged: 0 };
    }
    const eps = body.eps ?? 0;
    if (this.remainingFor(epoch) < eps - 1e-9) {
      return { epoch, date, status: "refused", value: null, eps_charged: 0 };
    }
    if (kind === "FC") {
      this.charge(epoch, eps);
      return { epoch, date, status: "ok", value: count, eps_charged: eps };
    }
    // FT: fires on count >= t, charging eps only on fire
    const fired = count >= (body.threshold ?? Infinity);
    if (fired) this.charge(epoch, eps);
    return {
      epoch,
      date,
      status: "ok",
      value: fired ? 1 : 0,
      eps_charged: fired ? eps : 0,
    };
  }

  private handleQuery(body: QueryBody): { status: number; payload: unknown } {
    const series = this.epochList(body).map((e) => this.runEpoch(body, e));
    const statuses = new Set(series.map((r) => r.status));
    if (statuses.size === 1 && statuses.has("refused")) {
      return {
        status: 409,
        payload: { detail: { error: "budget refused", epochs: series } },
      };
    }
    if (statuses.size === 1 && statuses.has("deleted")) {
      return {
        status: 410,
        payload: { detail: { error: "fine store deleted", epochs: series } },
      };
    }
    const resp: QueryResponse = {
      query_id: `q${this.nextId++}`,
      kind: body.kind.toUpperCase() as QueryResponse["kind"],
      radius: body.radius,
      radius_l2: Math.sqrt(2 * body.radius),
      threshold: body.threshold ?? null,
      eps: body.eps ?? null,
      series,
      total_charged: series.reduce((s, r) => s + r.eps_charged, 0),
    };
    this.trends.set(resp.query_id, resp);
    if (resp.kind === "FT") this.updateAlert(body, resp);
    return { status: 200, payload: resp };
  }

  private updateAlert(body: QueryBody, resp: QueryResponse): void {
    const firedEpochs = resp.series
      .filter((r) => r.status === "ok" && r.value === 1)
      .map((r) => r.epoch);
    const card: AlertCard = this.alerts.get(resp.query_id) ?? {
      id: resp.query_id,
      kind: "FT",
      text: body.text ?? null,
      threshold: resp.threshold,
      radius: resp.radius,
      epochs_watched: [],
      status: "armed",
      eps_charged: 0,
    };
    card.epochs_watched = [
      ...new Set([...card.epochs_watched, ...resp.series.map((r) => r.epoch)]),
    ].sort((a, b) => a - b);
    card.eps_charged += resp.total_charged;
    if (firedEpochs.length) {
      card.status = "fired";
      card.fired_epochs = [
        ...new Set([...(card.fired_epochs ?? []), ...firedEpochs]),
      ].sort((a, b) => a - b);
    }
    this.alerts.set(card.id, card);
  }

  private budgetSnapshot(): unknown {
    const epochs: Record<string, { remaining: number; deleted: boolean }> = {};
    for (const [e, rem] of this.remaining) {
      epochs[String(e)] = { remaining: rem, deleted: this.deleted.has(e) };
    }
    return {
      eps_f_max: this.epsFMax,
      coarse_charge: this.coarseCharge,
      epochs,
    };
  }

  /** FetchLike entry point for GatewayClient. */
  fetch: FetchLike = async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]*/, "");
    const auth = init?.headers?.["Authorization"];
    const respond = (status: number, payload: unknown) => ({
      status,
      json: async () => payload,
    });
    if (auth !== "Bearer test-token") {
      return respond(401, { detail: "missing or bad token" });
    }
    if (path === "/query" && init?.method === "POST") {
      const body = JSON.parse(init.body ?? "{}") as QueryBody;
      const { status, payload } = this.handleQuery(body);
      return respond(status, payload);
    }
    if (path === "/budget") return respond(200, this.budgetSnapshot());
    if (path === "/alerts") {
      return respond(200, { alerts: [...this.alerts.values()] });
    }
    const trend = path.match(/^\/trends\/(.+)$/);
    if (trend) {
      const hit = this.trends.get(trend[1]!);
      return hit
        ? respond(200, hit)
        : respond(404, { detail: "unknown trend id" });
    }
    return respond(404, { detail: "no such route" });
  };
}
