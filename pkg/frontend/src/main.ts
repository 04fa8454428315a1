// DOM wiring: chat on the left, generated-app viewer on the right.

import { GatewayClient } from "./client.js";
import { ChatFlow } from "./controller.js";
import { ChatViewState, canConfirmOrReject, canSendMessage, canSubmitFeedback } from "./state.js";
import type { FeedbackInput } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const flow = new ChatFlow(new GatewayClient(""), render);

function render(state: ChatViewState): void {
  // pass indicator
  const steps = document.querySelectorAll<HTMLElement>("#pass-indicator li");
  steps.forEach((step) => {
    const value = step.dataset.pass!;
    const active =
      state.pass === "confirmed" ? value === "confirmed" : value === String(state.pass);
    const done =
      state.pass === "confirmed" ? value !== "confirmed" : Number(value) < Number(state.pass);
    step.classList.toggle("active", active);
    step.classList.toggle("done", Boolean(done));
  });

  // transcript
  const log = $("chat-log");
  log.innerHTML = "";
  for (const turn of state.transcript) {
    const el = document.createElement("div");
    el.className = `turn ${turn.author} ${turn.kind}`;
    el.textContent = turn.text;
    log.appendChild(el);
  }
  log.scrollTop = log.scrollHeight;

  // proposal chips (read-only; changes go through chat)
  const proposal = $("proposal");
  proposal.innerHTML = "";
  proposal.hidden = !state.proposal || state.proposal.length === 0;
  for (const svc of state.proposal ?? []) {
    const card = document.createElement("div");
    card.className = "service-card";
    const title = document.createElement("h3");
    title.textContent = svc.name.replace(/_/g, " ");
    card.appendChild(title);
    for (const [key, value] of Object.entries(svc.params)) {
      const chip = document.createElement("span");
      chip.className = "chip";
      chip.textContent = `${key}: ${Array.isArray(value) ? value.join(", ") : String(value)}`;
      card.appendChild(chip);
    }
    proposal.appendChild(card);
  }

  // controls
  ($("send") as HTMLButtonElement).disabled = !canSendMessage(state);
  ($("message") as HTMLInputElement).disabled = !canSendMessage(state);
  const confirmRow = $("confirm-row");
  confirmRow.hidden = !canConfirmOrReject(state);

  // app viewer
  const viewer = $("viewer") as HTMLIFrameElement;
  const placeholder = $("viewer-placeholder");
  if (state.appVisible && state.appUrl) {
    if (viewer.src !== new URL(state.appUrl, location.origin).href) {
      viewer.src = state.appUrl;
    }
    viewer.hidden = false;
    placeholder.hidden = true;
    const link = $("app-link") as HTMLAnchorElement;
    link.href = state.appUrl;
    link.hidden = false;
  } else {
    viewer.hidden = true;
    placeholder.hidden = false;
    $("app-link").hidden = true;
  }

  // feedback form
  const form = $("feedback") as HTMLFormElement;
  form.hidden = state.pass !== "confirmed";
  (form.querySelector("button[type=submit]") as HTMLButtonElement).disabled =
    !canSubmitFeedback(state);
  $("feedback-done").hidden = !state.feedbackSubmitted;

  // error banner
  const banner = $("error-banner");
  banner.hidden = !state.error;
  banner.textContent = state.error ?? "";
}

function sendCurrent(): void {
  const input = $("message") as HTMLInputElement;
  const text = input.value.trim();
  if (!text) return;
  void flow.send(text).then(() => {
    if (!flow.state.error) input.value = "";
  });
}

function readRating(id: string): number {
  return Number(($(id) as HTMLInputElement).value);
}

function init(): void {
  $("send").addEventListener("click", sendCurrent);
  ($("message") as HTMLInputElement).addEventListener("keydown", (e) => {
    if (e.key === "Enter") {
      e.preventDefault();
      sendCurrent();
    }
  });
  $("confirm").addEventListener("click", () => void flow.confirm());
  $("reject").addEventListener("click", () => void flow.reject());

  ($("feedback") as HTMLFormElement).addEventListener("submit", (e) => {
    e.preventDefault();
    const record: FeedbackInput = {
      application_rating: readRating("rate-app"),
      accuracy_rating: readRating("rate-accuracy"),
      relevance_rating: readRating("rate-relevance"),
      query_summary: ($("fb-summary") as HTMLTextAreaElement).value,
      suggestions: ($("fb-suggestions") as HTMLTextAreaElement).value,
    };
    void flow.submitFeedback(record).then((problems) => {
      const box = $("feedback-problems");
      box.hidden = problems.length === 0;
      box.textContent = problems.join("; ");
    });
  });

  const params = new URLSearchParams(location.search);
  const sessionId = params.get("session");
  if (sessionId) {
    // reload path: refetch the envelope and reproject the identical view
    flow.state = { ...flow.state, sessionId };
    void flow.refresh();
  } else {
    void flow
      .start({ user_id: `visitor_${Date.now().toString(36)}` })
      .then(() => {
        if (flow.state.sessionId) {
          history.replaceState(null, "", `?session=${flow.state.sessionId}`);
        }
      });
  }
}

document.addEventListener("DOMContentLoaded", init);
