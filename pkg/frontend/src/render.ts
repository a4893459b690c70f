/** HTML renderers for the gauge and alert panels (pure string output). */

import type { AlertCardView, GaugeView } from "./model.js";

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export function renderGauge(view: GaugeView): string {
  const rows = view.rows
    .map((r) => {
      const pct = Math.max(0, Math.min(1, r.fraction)) * 100;
      const state = r.deleted
        ? `<span class="deleted-badge">fine store deleted</span>`
        : `<span class="remaining">${r.remaining.toFixed(3)} / ${r.max}</span>`;
      return (
        `<li class="gauge-row${r.deleted ? " deleted" : ""}" data-epoch="${r.epoch}">` +
        `<span class="epoch">epoch ${r.epoch}</span>` +
        `<span class="bar"><span class="fill" style="width:${pct.toFixed(1)}%"></span></span>` +
        state +
        `</li>`
      );
    })
    .join("");
  const coarse = view.coarseCharge
    ? `<p class="coarse-charge">one-time coarse charge: ε=${view.coarseCharge.epsP}, δ=${view.coarseCharge.deltaP}</p>`
    : `<p class="coarse-charge">no coarse charge recorded</p>`;
  const stale = view.stale ? `<span class="stale-badge">stale</span>` : "";
  return `<div class="budget-gauge">${stale}${coarse}<ul>${rows}</ul></div>`;
}

export function renderAlertCard(card: AlertCardView): string {
  const fired = card.firedEpochs.length
    ? `<span class="fired-epochs">fired at ${card.firedEpochs.join(", ")}</span>`
    : "";
  return (
    `<div class="alert-card ${card.status}" data-alert-id="${esc(card.id)}">` +
    `<span class="label">${esc(card.label)}</span>` +
    `<span class="status">${card.status}</span>` +
    `<span class="charge">${esc(card.chargeText)}</span>` +
    fired +
    `</div>`
  );
}
