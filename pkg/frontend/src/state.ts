// View state is a pure projection of the last session envelope plus local
// input: refetching the envelope after a reload reproduces the identical view.

import type { FeedbackInput, ProposalService, SessionEnvelope, Turn } from "./types.js";

export type PassIndicator = 1 | 2 | 3 | "confirmed";

export interface ChatViewState {
  sessionId: string | null;
  pass: PassIndicator;
  transcript: Turn[];
  proposal: ProposalService[] | null;
  appUrl: string | null;
  /** confirm/reject controls are visible iff the session sits at pass 3 */
  confirmControlsVisible: boolean;
  /** the app viewer is visible iff the session is confirmed */
  appVisible: boolean;
  feedbackSubmitted: boolean;
  busy: boolean;
  error: string | null;
}

export function initialState(): ChatViewState {
  return {
    sessionId: null,
    pass: 1,
    transcript: [],
    proposal: null,
    appUrl: null,
    confirmControlsVisible: false,
    appVisible: false,
    feedbackSubmitted: false,
    busy: false,
    error: null,
  };
}

export function passIndicator(passName: string): PassIndicator {
  switch (passName) {
    case "Pass2":
      return 2;
    case "Pass3":
      return 3;
    case "Confirmed":
      return "confirmed";
    default:
      // Pass1 and the transient Reverted both show step 1
      return 1;
  }
}

export function projectEnvelope(prev: ChatViewState, env: SessionEnvelope): ChatViewState {
  const pass = passIndicator(env.state.pass);
  return {
    sessionId: env.session_id,
    pass,
    transcript: env.transcript,
    proposal: env.proposal ?? null,
    appUrl: env.app_url ?? null,
    confirmControlsVisible: pass === 3,
    appVisible: pass === "confirmed" && Boolean(env.app_url),
    feedbackSubmitted: prev.feedbackSubmitted,
    busy: false,
    error: null,
  };
}

// ---------------------------------------------------------------------------
// Guards: no UI action may issue a request that is illegal for the current pass.
// ---------------------------------------------------------------------------

export function canSendMessage(state: ChatViewState): boolean {
  return state.sessionId !== null && !state.busy && state.pass !== "confirmed";
}

export function canConfirmOrReject(state: ChatViewState): boolean {
  return canSendMessage(state) && state.pass === 3;
}

export function canSubmitFeedback(state: ChatViewState): boolean {
  return state.sessionId !== null && state.pass === "confirmed" && !state.feedbackSubmitted && !state.busy;
}

// ---------------------------------------------------------------------------
// Feedback validation, mirroring the server's range rules.
// ---------------------------------------------------------------------------

const RATING_FIELDS = ["application_rating", "accuracy_rating", "relevance_rating"] as const;

export function validateFeedback(input: FeedbackInput): string[] {
  const problems: string[] = [];
  for (const field of RATING_FIELDS) {
    const value = input[field];
    if (!Number.isInteger(value) || value < 1 || value > 5) {
      problems.push(`${field} must be an integer between 1 and 5`);
    }
  }
  return problems;
}
