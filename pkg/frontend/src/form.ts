/** Query form state, validation, and the single-in-flight submit guard. */

import type { BudgetSnapshot, QueryBody, QueryKind } from "./types.js";
import { remainingFor } from "./model.js";

export interface FormState {
  kind: QueryKind;
  text: string;
  vectorText: string; // pasted whitespace/comma-separated floats
  radius: number; // cosine-distance radius in (0, 2]
  threshold: number | null;
  epochFrom: number;
  epochTo: number;
  eps: number | null; // slider value; only fine kinds spend it
}

export const isFineKind = (kind: QueryKind) => kind === "FC" || kind === "FT";
export const isThresholdKind = (kind: QueryKind) => kind === "FT" || kind === "CT";

export function parseVector(text: string): number[] | null {
  const trimmed = text.trim();
  if (!trimmed) return null;
  const parts = trimmed.split(/[\s,]+/).map(Number);
  return parts.some((v) => !Number.isFinite(v)) ? null : parts;
}

export interface Validation {
  ok: boolean;
  errors: string[];
}

/**
 * Validate the form against the latest budget snapshot.  Fine kinds must
 * not be submittable when any selected epoch's displayed remaining budget
 * is below the requested ε.
 */
export function validateForm(
  form: FormState,
  budget: BudgetSnapshot | null,
): Validation {
  const errors: string[] = [];
  const hasText = form.text.trim().length > 0;
  const vector = parseVector(form.vectorText);
  if (!hasText && vector === null) {
    errors.push("give query text or a pasted vector");
  }
  if (hasText && form.vectorText.trim()) {
    errors.push("give either text or a vector, not both");
  }
  if (!(form.radius > 0 && form.radius <= 2)) {
    errors.push("radius must be in (0, 2]");
  }
  if (form.epochTo < form.epochFrom) {
    errors.push("epoch range is reversed");
  }
  if (isThresholdKind(form.kind)) {
    if (form.threshold === null || form.threshold < 1) {
      errors.push("threshold queries need t >= 1");
    }
  }
  if (isFineKind(form.kind)) {
    if (form.eps === null || form.eps <= 0) {
      errors.push("fine queries need ε > 0");
    } else if (budget) {
      for (let e = form.epochFrom; e <= form.epochTo; e++) {
        const rem = remainingFor(budget, e);
        if (rem < form.eps) {
          errors.push(`epoch ${e}: remaining budget ${rem} < ε ${form.eps}`);
          break;
        }
      }
    }
  }
  return { ok: errors.length === 0, errors };
}

export function toQueryBody(form: FormState): QueryBody {
  const body: QueryBody = {
    kind: form.kind,
    radius: form.radius,
    epochs: { from: form.epochFrom, to: form.epochTo },
  };
  const vector = parseVector(form.vectorText);
  if (form.text.trim()) body.text = form.text.trim();
  else if (vector) body.vector = vector;
  if (isThresholdKind(form.kind)) body.threshold = form.threshold;
  if (isFineKind(form.kind)) body.eps = form.eps;
  return body;
}

/**
 * Serializes fine-query submission: at most one in-flight fine query at a
 * time, so a double-click cannot race two budget charges.
 */
export class SubmitGuard {
  private fineInFlight = false;

  async run<T>(kind: QueryKind, task: () => Promise<T>): Promise<T> {
    if (isFineKind(kind)) {
      if (this.fineInFlight) {
        throw new Error("a fine query is already in flight");
      }
      this.fineInFlight = true;
      try {
        return await task();
      } finally {
        this.fineInFlight = false;
      }
    }
    return task();
  }

  get busy(): boolean {
    return this.fineInFlight;
  }
}
