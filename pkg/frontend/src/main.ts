// Dashboard wiring: poll-on-action only (trial timescales are days), every
// displayed probability comes from the service payload.

import { ApiError, ConductClient } from "./api.js";
import type { Recommendation, TrialEvent, TrialStateView } from "./api.js";
import { validateEventForm, whatIfEnabled } from "./model.js";
import {
  renderBanner,
  renderGammaBars,
  renderSafety,
  renderSwimlanes,
  renderWhatIfPanel,
} from "./render.js";

const DEFAULT_PARAMS = {
  p_t: 0.3,
  n_doses: 3,
  max_n: 18,
  eps1: 0.05,
  eps2: 0.05,
  tau: 28.0,
  k: 3,
  pi_e: 1.0,
  pi_d: 0.15,
  cohort_size: 1,
  start_dose: 1,
};

interface AppState {
  client: ConductClient;
  trialId: string | null;
  state: TrialStateView | null;
  recommendation: Recommendation | null;
  whatIf: Recommendation | null;
  error: string | null;
}

const app: AppState = {
  client: new ConductClient(""),
  trialId: null,
  state: null,
  recommendation: null,
  whatIf: null,
  error: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function refresh(): Promise<void> {
  if (!app.trialId) return;
  try {
    app.state = await app.client.state(app.trialId);
    app.recommendation = await app.client.recommendation(app.trialId);
    app.error = null;
  } catch (err) {
    app.error = err instanceof Error ? err.message : String(err);
  }
  render();
}

function render(): void {
  const status = el<HTMLDivElement>("status");
  status.textContent = app.error ? `Error: ${app.error}` : "";
  const main = el<HTMLDivElement>("trial-view");
  if (!app.state || !app.recommendation) {
    main.hidden = true;
    return;
  }
  main.hidden = false;
  el<HTMLDivElement>("banner").innerHTML = renderBanner(app.recommendation);
  el<HTMLDivElement>("gamma").innerHTML = renderGammaBars(app.recommendation);
  el<HTMLDivElement>("safety").innerHTML = renderSafety(app.state);
  el<HTMLDivElement>("swimlanes").innerHTML = renderSwimlanes(app.state);
  el<HTMLDivElement>("whatif-current").innerHTML = renderWhatIfPanel(
    app.recommendation,
    whatIfEnabled(app.state),
  );
  renderWhatIfControls();
  el<HTMLDivElement>("whatif-preview").innerHTML = app.whatIf
    ? `<h4>Hypothetical recommendation</h4>` +
      renderBanner(app.whatIf) +
      renderGammaBars(app.whatIf)
    : "";
}

function renderWhatIfControls(): void {
  const holder = el<HTMLDivElement>("whatif-controls");
  if (!app.state) return;
  const pending = app.state.patients.filter((p) => p.status === "pending");
  if (pending.length === 0) {
    holder.innerHTML = "";
    return;
  }
  holder.innerHTML =
    pending
      .map(
        (p) =>
          `<label class="whatif-pick">#${p.id} (dose ${p.dose}): ` +
          `<select data-pid="${p.id}">` +
          `<option value="">leave pending</option>` +
          `<option value="dlt">DLT</option>` +
          `<option value="no_dlt">no DLT</option>` +
          `</select></label>`,
      )
      .join("") + `<button id="whatif-go">Preview</button>`;
  el<HTMLButtonElement>("whatif-go").onclick = async () => {
    if (!app.trialId) return;
    const resolutions: Record<string, "dlt" | "no_dlt"> = {};
    holder.querySelectorAll<HTMLSelectElement>("select[data-pid]").forEach((sel) => {
      if (sel.value === "dlt" || sel.value === "no_dlt") {
        resolutions[sel.dataset.pid!] = sel.value;
      }
    });
    if (Object.keys(resolutions).length === 0) {
      app.error = "pick at least one hypothetical resolution";
      render();
      return;
    }
    try {
      app.whatIf = await app.client.whatIf(app.trialId, resolutions);
      app.error = null;
    } catch (err) {
      app.error = err instanceof Error ? err.message : String(err);
    }
    render();
  };
}

function eventFromForm(): TrialEvent {
  const type = el<HTMLSelectElement>("ev-type").value as TrialEvent["type"];
  const num = (id: string): number | undefined => {
    const raw = el<HTMLInputElement>(id).value.trim();
    return raw === "" ? undefined : Number(raw);
  };
  const event: TrialEvent = { type, time: num("ev-time") ?? NaN };
  const pid = num("ev-patient");
  const dose = num("ev-dose");
  const dltTime = num("ev-dlt-time");
  if (type === "enrollment") {
    if (pid !== undefined) event.patient_id = pid;
    if (dose !== undefined) event.dose = dose;
  } else if (type !== "clock_advance") {
    if (pid !== undefined) event.patient_id = pid;
    if (type === "dlt_observed" && dltTime !== undefined) event.dlt_time = dltTime;
  }
  return event;
}

function showFieldErrors(errors: Record<string, string>): void {
  for (const field of ["time", "patient_id", "dose", "dlt_time"]) {
    const slot = document.getElementById(`err-${field}`);
    if (slot) slot.textContent = errors[field] ?? "";
  }
}

async function submitEvent(): Promise<void> {
  if (!app.trialId || !app.state) return;
  const event = eventFromForm();
  const errors = validateEventForm(event, app.state);
  showFieldErrors(errors);
  if (Object.keys(errors).length > 0) return;
  try {
    await app.client.postEvents(app.trialId, [event]);
    app.whatIf = null;
    await refresh();
  } catch (err) {
    if (err instanceof ApiError) {
      showFieldErrors({ time: err.message });
    } else {
      app.error = err instanceof Error ? err.message : String(err);
      render();
    }
  }
}

async function boot(): Promise<void> {
  app.client = new ConductClient(el<HTMLInputElement>("base-url").value);
  el<HTMLButtonElement>("new-trial").onclick = async () => {
    try {
      let params = DEFAULT_PARAMS;
      const raw = el<HTMLTextAreaElement>("params-json").value.trim();
      if (raw) params = { ...DEFAULT_PARAMS, ...JSON.parse(raw) };
      app.trialId = await app.client.createTrial(params);
      el<HTMLInputElement>("trial-id").value = app.trialId;
      app.whatIf = null;
      await refresh();
    } catch (err) {
      app.error = err instanceof Error ? err.message : String(err);
      render();
    }
  };
  el<HTMLButtonElement>("open-trial").onclick = async () => {
    app.trialId = el<HTMLInputElement>("trial-id").value.trim();
    app.whatIf = null;
    await refresh();
  };
  el<HTMLButtonElement>("refresh").onclick = refresh;
  el<HTMLButtonElement>("ev-submit").onclick = submitEvent;
  el<HTMLInputElement>("base-url").onchange = () => {
    app.client = new ConductClient(el<HTMLInputElement>("base-url").value);
  };
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => {
    void boot();
  });
}
