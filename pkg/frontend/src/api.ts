// Typed client for the trial-conduct HTTP service. The dashboard talks to
// the backend exclusively through this module.

export interface DesignParams {
  p_t: number;
  n_doses: number;
  max_n: number;
  eps1: number;
  eps2: number;
  tau: number;
  k: number;
  pi_e: number;
  pi_d: number;
  cohort_size: number;
  start_dose: number;
  [key: string]: unknown;
}

export interface TrialEvent {
  type: "enrollment" | "dlt_observed" | "assessment_completed" | "clock_advance";
  time: number;
  patient_id?: number;
  dose?: number;
  dlt_time?: number;
}

export interface PatientView {
  id: number;
  dose: number;
  enroll_time: number;
  status: "pending" | "dlt" | "no_dlt";
  dlt_time?: number;
  follow_up?: number;
}

export interface DoseTally {
  n: number;
  m: number;
  r: number;
  follow_ups: number[];
}

export interface TrialStateView {
  trial_id: string;
  params: DesignParams;
  clock: number;
  status: string;
  suspend_reason: string | null;
  current_dose: number;
  n_enrolled: number;
  excluded_doses: number[];
  patients: PatientView[];
  tallies: Record<string, DoseTally>;
  audit: unknown[];
}

// Numbers come as floats for layout; the matching `display` strings are what
// the UI must show, byte for byte.
export interface Recommendation {
  action: "assign" | "suspend" | "terminate" | "complete";
  assigned_dose?: number | null;
  reason?: string | null;
  rules: string[];
  dose?: number;
  n?: number;
  m?: number;
  r?: number;
  follow_ups?: number[];
  gamma?: Record<"-1" | "0" | "1", number> | null;
  a_star?: number | null;
  s_pmf?: number[] | null;
  s_decisions?: number[] | null;
  pending_ids?: number[];
  seed?: number;
  n_draws?: number;
  thresholds?: { pi_e: number; pi_d: number };
  display?: {
    gamma?: Record<"-1" | "0" | "1", string>;
    s_pmf?: string[];
    pi_e: string;
    pi_d: string;
  };
  mtd_report?: { selected: number | null; branch: string } | null;
  hypothetical?: boolean;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const message =
      typeof body === "object" && body !== null && "error" in body
        ? String((body as { error: unknown }).error)
        : `HTTP ${response.status}`;
    throw new ApiError(response.status, message);
  }
  return body as T;
}

export class ConductClient {
  constructor(
    private base: string = "",
    private token: string | null = null,
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  async createTrial(params: Partial<DesignParams>): Promise<string> {
    const body = await asJson<{ trial_id: string }>(
      await fetch(`${this.base}/trials`, {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify(params),
      }),
    );
    return body.trial_id;
  }

  async listTrials(): Promise<string[]> {
    const body = await asJson<{ trials: string[] }>(
      await fetch(`${this.base}/trials`, { headers: this.headers() }),
    );
    return body.trials;
  }

  async state(trialId: string): Promise<TrialStateView> {
    return asJson(
      await fetch(`${this.base}/trials/${trialId}/state`, { headers: this.headers() }),
    );
  }

  async postEvents(trialId: string, events: TrialEvent[]): Promise<unknown> {
    return asJson(
      await fetch(`${this.base}/trials/${trialId}/events`, {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify(events),
      }),
    );
  }

  async recommendation(trialId: string, seed?: number): Promise<Recommendation> {
    const query = seed === undefined ? "" : `?seed=${seed}`;
    return asJson(
      await fetch(`${this.base}/trials/${trialId}/recommendation${query}`, {
        headers: this.headers(),
      }),
    );
  }

  async whatIf(
    trialId: string,
    resolutions: Record<string, "dlt" | "no_dlt">,
    seed?: number,
  ): Promise<Recommendation> {
    const payload: Record<string, unknown> = { resolutions };
    if (seed !== undefined) payload.seed = seed;
    return asJson(
      await fetch(`${this.base}/trials/${trialId}/whatif`, {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify(payload),
      }),
    );
  }
}
