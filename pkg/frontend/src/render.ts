// HTML renderers: pure string builders over the view models, so the exact
// bytes shown for every probability can be asserted in tests.

import type { Recommendation, TrialStateView } from "./api.js";
import {
  bannerModel,
  gammaBars,
  safetyIndicators,
  swimlane,
  whatIfRows,
} from "./model.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBanner(rec: Recommendation): string {
  const banner = bannerModel(rec);
  const detail = banner.detail ? ` <span class="detail">${esc(banner.detail)}</span>` : "";
  return `<div class="banner banner-${banner.kind}"><strong>${esc(banner.headline)}</strong>${detail}</div>`;
}

export function renderGammaBars(rec: Recommendation): string {
  const bars = gammaBars(rec);
  if (bars.length === 0) return `<div class="gamma empty">no decision distribution</div>`;
  const rows = bars
    .map(
      (bar) =>
        `<div class="gamma-row" data-key="${bar.key}">` +
        `<span class="gamma-label">${esc(bar.label)}</span>` +
        `<span class="gamma-track"><span class="gamma-fill" style="width:${bar.width.toFixed(2)}%"></span></span>` +
        `<span class="gamma-value">${esc(bar.value)}</span>` +
        `</div>`,
    )
    .join("");
  return `<div class="gamma">${rows}</div>`;
}

export function renderWhatIfPanel(rec: Recommendation, enabled: boolean): string {
  if (!enabled) {
    return `<div class="whatif disabled">No pending patients — nothing to explore.</div>`;
  }
  const rows = whatIfRows(rec);
  if (rows.length === 0) {
    return `<div class="whatif disabled">Decision is deterministic at this tally.</div>`;
  }
  const body = rows
    .map(
      (row) =>
        `<tr><td>S = ${row.s}</td><td>${esc(row.decision)}</td><td>${esc(row.prob)}</td></tr>`,
    )
    .join("");
  return (
    `<table class="whatif"><thead><tr><th>pending DLTs</th><th>decision</th><th>Pr</th></tr></thead>` +
    `<tbody>${body}</tbody></table>`
  );
}

export function renderSwimlanes(state: TrialStateView): string {
  const lanes = swimlane(state);
  if (lanes.length === 0) return `<div class="swimlane empty">No patients enrolled yet.</div>`;
  const rows = lanes
    .map((lane) => {
      const marker =
        lane.marker === "dlt"
          ? `<span class="marker dlt" style="left:${lane.markerPct.toFixed(2)}%" title="DLT">✕</span>`
          : lane.marker === "pending"
            ? `<span class="marker pending" style="left:${lane.markerPct.toFixed(2)}%" title="pending">○</span>`
            : `<span class="marker done" style="left:${lane.markerPct.toFixed(2)}%" title="no DLT">●</span>`;
      return (
        `<div class="lane" data-patient="${lane.patient.id}">` +
        `<span class="lane-label">${esc(lane.label)}</span>` +
        `<span class="lane-track">` +
        `<span class="lane-bar status-${lane.patient.status}" style="left:${lane.startPct.toFixed(2)}%;width:${lane.barPct.toFixed(2)}%"></span>` +
        marker +
        `</span></div>`
      );
    })
    .join("");
  return `<div class="swimlane">${rows}</div>`;
}

export function renderSafety(state: TrialStateView): string {
  const cells = safetyIndicators(state)
    .map(
      (ind) =>
        `<span class="dose ${ind.excluded ? "excluded" : "open"}${
          state.current_dose === ind.dose ? " current" : ""
        }" data-dose="${ind.dose}">d${ind.dose}<small>${ind.tally}</small></span>`,
    )
    .join("");
  const status =
    state.status === "suspended"
      ? `<span class="trial-status suspended">suspended: ${esc(state.suspend_reason ?? "")}</span>`
      : `<span class="trial-status ${state.status}">${esc(state.status)}</span>`;
  return `<div class="safety">${cells}${status}</div>`;
}
