import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { Recommendation, TrialStateView } from "../src/api.js";

const here = dirname(fileURLToPath(import.meta.url));

function load<T>(name: string): T {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8")) as T;
}

// Recorded straight from the conduct service for the two worked trial
// histories (six patients at dose 2, two of them pending at day 63).
export const trial1Rec = load<Recommendation>("trial1_recommendation.json");
export const trial1State = load<TrialStateView>("trial1_state.json");
export const trial2Rec = load<Recommendation>("trial2_recommendation.json");
export const trial2State = load<TrialStateView>("trial2_state.json");
export const trial2WhatIf = load<Recommendation>("trial2_whatif_all_dlt.json");
