// Pure view-model builders. Every probability string shown in the UI is
// lifted verbatim from the service's `display` block; numbers are used only
// for geometry (bar widths, swimlane positions).

import type {
  PatientView,
  Recommendation,
  TrialEvent,
  TrialStateView,
} from "./api.js";

export const ACTION_LABELS: Record<string, string> = {
  "-1": "De-escalate",
  "0": "Stay",
  "1": "Escalate",
};

export interface Banner {
  kind: "assign" | "suspend" | "terminate" | "complete" | "idle";
  headline: string;
  detail: string;
}

export function bannerModel(rec: Recommendation): Banner {
  if (rec.action === "complete") {
    const selected = rec.mtd_report?.selected;
    return {
      kind: "complete",
      headline: "Trial complete",
      detail:
        selected === null || selected === undefined
          ? "No MTD selected"
          : `Selected MTD: dose ${selected}`,
    };
  }
  if (rec.action === "terminate") {
    return {
      kind: "terminate",
      headline: "Terminated",
      detail: "Excessive toxicity at the lowest dose (safety rule 1)",
    };
  }
  if (rec.action === "suspend") {
    const d = rec.display;
    let detail: string;
    switch (rec.reason) {
      case "escalation-confidence":
        detail = `escalation confidence ${d?.gamma?.["1"] ?? "?"} < π_E=${d?.pi_e ?? "?"}`;
        break;
      case "de-escalation-risk":
        detail = `de-escalation risk ${d?.gamma?.["-1"] ?? "?"} > π_D=${d?.pi_d ?? "?"}`;
        break;
      case "m_d-zero":
        detail = "no fully evaluated non-DLT at the current dose yet";
        break;
      case "lowest-dose-safety-pending":
        detail = "safety review at the lowest dose awaits pending outcomes";
        break;
      case "pending-outcomes":
        detail = "waiting for complete outcomes at the current dose";
        break;
      default:
        detail = rec.reason ?? "";
    }
    return { kind: "suspend", headline: "Suspended", detail };
  }
  const label =
    rec.a_star === null || rec.a_star === undefined
      ? "Assign"
      : (ACTION_LABELS[String(rec.a_star)] ?? "Assign");
  return {
    kind: "assign",
    headline: label,
    detail:
      rec.assigned_dose === null || rec.assigned_dose === undefined
        ? ""
        : `Next patient at dose ${rec.assigned_dose}`,
  };
}

export interface GammaBar {
  key: "-1" | "0" | "1";
  label: string;
  value: string; // byte-identical display string from the service
  width: number; // percent, for layout only
}

export function gammaBars(rec: Recommendation): GammaBar[] {
  if (!rec.gamma || !rec.display?.gamma) return [];
  const keys: Array<"-1" | "0" | "1"> = ["-1", "0", "1"];
  return keys.map((key) => ({
    key,
    label: ACTION_LABELS[key] ?? key,
    value: rec.display!.gamma![key],
    width: Math.max(0, Math.min(100, rec.gamma![key] * 100)),
  }));
}

export interface WhatIfRow {
  s: number;
  decision: string;
  prob: string; // byte-identical display string
}

// One row per possible pending DLT count: the complete-data decision it
// implies and its posterior probability — the decision sum made visible.
export function whatIfRows(rec: Recommendation): WhatIfRow[] {
  if (!rec.s_decisions || !rec.display?.s_pmf) return [];
  return rec.s_decisions.map((decision, s) => ({
    s,
    decision: ACTION_LABELS[String(decision)] ?? String(decision),
    prob: rec.display!.s_pmf![s] ?? "?",
  }));
}

export function whatIfEnabled(state: TrialStateView): boolean {
  return state.patients.some((p) => p.status === "pending");
}

export interface SwimlaneRow {
  patient: PatientView;
  startPct: number;
  barPct: number; // follow-up bar width
  marker: "dlt" | "pending" | "done";
  markerPct: number;
  label: string;
}

// Figure-style layout: one lane per patient, enrollment tick, follow-up bar,
// a cross for a DLT, an open marker while pending.
export function swimlane(state: TrialStateView): SwimlaneRow[] {
  const tau = state.params.tau;
  const horizon = Math.max(state.clock, ...state.patients.map((p) => p.enroll_time + tau), 1);
  return state.patients.map((p) => {
    const followed =
      p.status === "dlt" ? (p.dlt_time ?? 0) : p.status === "pending" ? (p.follow_up ?? 0) : tau;
    const marker = p.status === "dlt" ? "dlt" : p.status === "pending" ? "pending" : "done";
    return {
      patient: p,
      startPct: (100 * p.enroll_time) / horizon,
      barPct: (100 * followed) / horizon,
      marker,
      markerPct: (100 * (p.enroll_time + followed)) / horizon,
      label: `#${p.id} d${p.dose}`,
    };
  });
}

export interface FormErrors {
  [field: string]: string;
}

// Client-side checks mirroring the service's 409/422 semantics so obviously
// invalid submissions never leave the browser.
export function validateEventForm(
  event: TrialEvent,
  state: TrialStateView,
): FormErrors {
  const errors: FormErrors = {};
  if (!Number.isFinite(event.time)) {
    errors.time = "time is required";
  } else if (event.time < state.clock) {
    errors.time = `time must not precede the trial clock (t=${state.clock})`;
  }
  if (event.type === "enrollment") {
    if (!event.patient_id || event.patient_id < 1) {
      errors.patient_id = "patient id must be a positive integer";
    } else if (state.patients.some((p) => p.id === event.patient_id)) {
      errors.patient_id = `patient ${event.patient_id} already enrolled`;
    }
    if (!event.dose || event.dose < 1 || event.dose > state.params.n_doses) {
      errors.dose = `dose must lie in 1..${state.params.n_doses}`;
    }
  }
  if (event.type === "dlt_observed" || event.type === "assessment_completed") {
    const patient = state.patients.find((p) => p.id === event.patient_id);
    if (!patient) {
      errors.patient_id = "unknown patient";
    } else if (patient.status !== "pending") {
      errors.patient_id = `patient ${patient.id} is already resolved`;
    }
    if (event.type === "dlt_observed") {
      if (event.dlt_time === undefined || event.dlt_time <= 0 || event.dlt_time > state.params.tau) {
        errors.dlt_time = `time to DLT must lie in (0, ${state.params.tau}]`;
      } else if (
        patient &&
        Number.isFinite(event.time) &&
        patient.enroll_time + event.dlt_time > event.time
      ) {
        errors.dlt_time = "DLT cannot be reported before it occurred";
      }
    }
  }
  return errors;
}

export interface SafetyIndicator {
  dose: number;
  excluded: boolean;
  tally: string;
}

export function safetyIndicators(state: TrialStateView): SafetyIndicator[] {
  const out: SafetyIndicator[] = [];
  for (let dose = 1; dose <= state.params.n_doses; dose++) {
    const t = state.tallies[String(dose)];
    out.push({
      dose,
      excluded: state.excluded_doses.includes(dose),
      tally: t ? `${t.n}/${t.m}/${t.r}` : "0/0/0",
    });
  }
  return out;
}
