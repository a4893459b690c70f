/** Browser entry point: wires the form, chart, gauge, and alert polling. */

import { BudgetRefused, EpochDeleted, GatewayClient, GatewayError } from "./api.js";
import { renderChartSvg } from "./chart.js";
import { alertCardView, gaugeView, trendView } from "./model.js";
import { renderAlertCard, renderGauge } from "./render.js";
import { SubmitGuard, toQueryBody, validateForm, type FormState } from "./form.js";
import type { BudgetSnapshot, QueryKind } from "./types.js";

const POLL_INTERVAL_MS = Number(
  new URLSearchParams(location.search).get("poll") ?? "5000",
);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startConsole(): void {
  const params = new URLSearchParams(location.search);
  const client = new GatewayClient(
    params.get("gateway") ?? "",
    params.get("token") ?? "",
  );
  const guard = new SubmitGuard();
  let lastBudget: BudgetSnapshot | null = null;

  const readForm = (): FormState => ({
    kind: (el<HTMLSelectElement>("kind").value as QueryKind) ?? "CC",
    text: el<HTMLInputElement>("text").value,
    vectorText: el<HTMLTextAreaElement>("vector").value,
    radius: Number(el<HTMLInputElement>("radius").value),
    threshold: el<HTMLInputElement>("threshold").value
      ? Number(el<HTMLInputElement>("threshold").value)
      : null,
    epochFrom: Number(el<HTMLInputElement>("epoch-from").value),
    epochTo: Number(el<HTMLInputElement>("epoch-to").value),
    eps: el<HTMLInputElement>("eps").value
      ? Number(el<HTMLInputElement>("eps").value)
      : null,
  });

  const refreshValidity = () => {
    const v = validateForm(readForm(), lastBudget);
    el<HTMLButtonElement>("submit").disabled = !v.ok || guard.busy;
    el("form-errors").textContent = v.errors.join("; ");
  };

  const refreshBudget = async () => {
    try {
      lastBudget = await client.budget();
      el("gauge").innerHTML = renderGauge(gaugeView(lastBudget));
    } catch {
      if (lastBudget) {
        el("gauge").innerHTML = renderGauge(gaugeView(lastBudget, true));
      }
    }
    refreshValidity();
  };

  const refreshAlerts = async () => {
    try {
      const { alerts } = await client.alerts();
      el("alerts").innerHTML = alerts
        .map((a) => renderAlertCard(alertCardView(a)))
        .join("");
    } catch {
      /* keep last view; gauge shows staleness */
    }
  };

  el("submit").addEventListener("click", async () => {
    const form = readForm();
    const v = validateForm(form, lastBudget);
    if (!v.ok) return;
    el("status").textContent = "pending…";
    try {
      const resp = await guard.run(form.kind, () =>
        client.submitQuery(toQueryBody(form)),
      );
      const view = trendView(resp);
      el("chart").innerHTML = renderChartSvg(view);
      el("status").textContent =
        `query ${view.queryId}: total charged ε=${view.totalCharged}`;
    } catch (err) {
      if (err instanceof BudgetRefused) {
        el("status").textContent =
          "refused: the remaining budget cannot cover this query on any selected epoch";
      } else if (err instanceof EpochDeleted) {
        el("status").textContent =
          "unavailable: the fine store for every selected epoch has been deleted";
      } else if (err instanceof GatewayError) {
        el("status").textContent = `gateway error ${err.status}`;
      } else {
        el("status").textContent = String(err);
      }
    }
    await refreshBudget();
    await refreshAlerts();
  });

  for (const id of ["kind", "text", "vector", "radius", "threshold", "epoch-from", "epoch-to", "eps"]) {
    el(id).addEventListener("input", refreshValidity);
    el(id).addEventListener("change", refreshValidity);
  }

  void refreshBudget();
  void refreshAlerts();
  setInterval(refreshAlerts, POLL_INTERVAL_MS);
  setInterval(refreshBudget, POLL_INTERVAL_MS);
}

if (typeof document !== "undefined" && document.getElementById("submit")) {
  startConsole();
}
