// Drives the chat flow against the gateway with one in-flight request per
// session and pass-guarded confirm/reject/feedback actions.

import { GatewayClient, GatewayError } from "./client.js";
import {
  ChatViewState,
  canConfirmOrReject,
  canSendMessage,
  canSubmitFeedback,
  initialState,
  projectEnvelope,
  validateFeedback,
} from "./state.js";
import type { FeedbackInput, UserProfileInput } from "./types.js";

export type StateListener = (state: ChatViewState) => void;

export class ChatFlow {
  state: ChatViewState = initialState();

  constructor(
    private client: GatewayClient,
    private onChange: StateListener = () => {},
  ) {}

  private update(patch: Partial<ChatViewState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.state);
  }

  async start(profile: UserProfileInput): Promise<void> {
    this.update({ busy: true, error: null });
    try {
      const env = await this.client.createSession(profile);
      this.state = projectEnvelope(this.state, env);
      this.onChange(this.state);
    } catch (err) {
      this.update({ busy: false, error: describe(err) });
    }
  }

  /** Send one user message; ignored while busy or after confirmation. */
  async send(text: string): Promise<void> {
    if (!canSendMessage(this.state) || !text.trim()) return;
    const sessionId = this.state.sessionId!;
    this.update({ busy: true, error: null });
    try {
      const env = await this.client.sendMessage(sessionId, text);
      this.state = projectEnvelope(this.state, env);
      this.onChange(this.state);
    } catch (err) {
      // surfaced inline; the input stays so the user can retry
      this.update({ busy: false, error: describe(err) });
    }
  }

  async confirm(): Promise<void> {
    if (!canConfirmOrReject(this.state)) return;
    await this.send("confirm");
  }

  async reject(): Promise<void> {
    if (!canConfirmOrReject(this.state)) return;
    await this.send("reject");
  }

  /** Refetch the envelope (page reload path): the view must reproduce. */
  async refresh(): Promise<void> {
    if (!this.state.sessionId) return;
    const env = await this.client.getSession(this.state.sessionId);
    this.state = projectEnvelope(this.state, env);
    this.onChange(this.state);
  }

  /**
   * Submit feedback once per session. Returns the client-side validation
   * problems; an empty list means the record was accepted (or rejected by the
   * server, in which case `state.error` is set).
   */
  async submitFeedback(input: FeedbackInput): Promise<string[]> {
    if (!canSubmitFeedback(this.state)) return ["feedback is closed for this session"];
    const problems = validateFeedback(input);
    if (problems.length > 0) return problems;
    const sessionId = this.state.sessionId!;
    this.update({ busy: true, error: null });
    try {
      await this.client.submitFeedback(sessionId, input);
      this.update({ busy: false, feedbackSubmitted: true });
    } catch (err) {
      if (err instanceof GatewayError && err.status === 409) {
        // already recorded server-side: disable the form anyway
        this.update({ busy: false, feedbackSubmitted: true, error: err.detail });
      } else {
        this.update({ busy: false, error: describe(err) });
      }
    }
    return [];
  }
}

function describe(err: unknown): string {
  if (err instanceof GatewayError) return err.detail;
  if (err instanceof Error) return err.message;
  return String(err);
}
