/** Thin typed client for the gateway HTTP/JSON API.
 *
 * The console consumes only this API; every displayed number comes from a
 * gateway response, never from client-side computation.
 */

import type {
  AlertsResponse,
  BudgetSnapshot,
  QueryBody,
  QueryResponse,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class GatewayError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly detail: unknown = null,
  ) {
    super(message);
    this.name = "GatewayError";
  }
}

/** 409: every requested epoch refused the charge. */
export class BudgetRefused extends GatewayError {}
/** 410: every requested epoch's fine store has been deleted. */
export class EpochDeleted extends GatewayError {}

export class GatewayClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchImpl: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private headers(): Record<string, string> {
    return {
      Authorization: `Bearer ${this.token}`,
      "Content-Type": "application/json",
    };
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (resp.status === 200) {
      return (await resp.json()) as T;
    }
    let detail: unknown = null;
    try {
      detail = ((await resp.json()) as { detail?: unknown }).detail ?? null;
    } catch {
      /* non-JSON error body */
    }
    if (resp.status === 409) {
      throw new BudgetRefused("budget refused", 409, detail);
    }
    if (resp.status === 410) {
      throw new EpochDeleted("fine store deleted", 410, detail);
    }
    throw new GatewayError(`gateway error ${resp.status}`, resp.status, detail);
  }

  submitQuery(body: QueryBody): Promise<QueryResponse> {
    return this.request<QueryResponse>("POST", "/query", body);
  }

  budget(): Promise<BudgetSnapshot> {
    return this.request<BudgetSnapshot>("GET", "/budget");
  }

  alerts(): Promise<AlertsResponse> {
    return this.request<AlertsResponse>("GET", "/alerts");
  }

  trend(queryId: string): Promise<QueryResponse> {
    return this.request<QueryResponse>("GET", `/trends/${queryId}`);
  }
}
