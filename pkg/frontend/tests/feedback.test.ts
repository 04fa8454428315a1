import { describe, expect, it } from "vitest";

import { GatewayClient } from "../src/client.js";
import { ChatFlow } from "../src/controller.js";
import { validateFeedback } from "../src/state.js";
import type { FeedbackInput } from "../src/types.js";
import { FakeGateway } from "./fake-gateway.js";

function ratings(app: number, acc: number, rel: number): FeedbackInput {
  return { application_rating: app, accuracy_rating: acc, relevance_rating: rel };
}

async function confirmedFlow() {
  const gateway = new FakeGateway();
  const flow = new ChatFlow(new GatewayClient("", gateway.fetch));
  await flow.start({ user_id: "visitor" });
  await flow.send("old city");
  await flow.send("dinner too");
  await flow.confirm();
  return { gateway, flow };
}

describe("feedback validation", () => {
  it("accepts in-range integer ratings", () => {
    expect(validateFeedback(ratings(4, 4, 5))).toEqual([]);
  });

  it("blocks out-of-range and non-integer ratings client-side", () => {
    expect(validateFeedback(ratings(0, 4, 4)).length).toBe(1);
    expect(validateFeedback(ratings(6, 4, 4)).length).toBe(1);
    expect(validateFeedback(ratings(4, 2.5, 4)).length).toBe(1);
    expect(validateFeedback(ratings(0, 6, 7)).length).toBe(3);
  });
});

describe("feedback round-trip", () => {
  it("submits (4, 4, 5) and stores the record on the gateway", async () => {
    const { gateway, flow } = await confirmedFlow();
    const problems = await flow.submitFeedback({
      ...ratings(4, 4, 5),
      query_summary: "old city evening",
    });
    expect(problems).toEqual([]);
    expect(flow.state.feedbackSubmitted).toBe(true);
    const stored = [...gateway.sessions.values()][0].feedback as FeedbackInput;
    expect(stored.application_rating).toBe(4);
    expect(stored.relevance_rating).toBe(5);
  });

  it("never sends an out-of-range record over the wire", async () => {
    const { gateway, flow } = await confirmedFlow();
    const problems = await flow.submitFeedback(ratings(0, 4, 4));
    expect(problems.length).toBe(1);
    expect([...gateway.sessions.values()][0].feedback).toBeUndefined();
  });

  it("disables the second submit: one record per session", async () => {
    const { flow } = await confirmedFlow();
    await flow.submitFeedback(ratings(4, 4, 4));
    expect(flow.state.feedbackSubmitted).toBe(true);
    const problems = await flow.submitFeedback(ratings(5, 5, 5));
    expect(problems).toEqual(["feedback is closed for this session"]);
  });

  it("reflects a server-side duplicate rejection as submitted", async () => {
    const { gateway, flow } = await confirmedFlow();
    // another tab already submitted
    const other = new ChatFlow(new GatewayClient("", gateway.fetch));
    other.state = { ...flow.state };
    await other.submitFeedback(ratings(3, 3, 3));

    await flow.submitFeedback(ratings(4, 4, 4));
    expect(flow.state.feedbackSubmitted).toBe(true); // 409 understood as recorded
  });

  it("feedback before confirmation is refused", async () => {
    const gateway = new FakeGateway();
    const flow = new ChatFlow(new GatewayClient("", gateway.fetch));
    await flow.start({ user_id: "visitor" });
    const problems = await flow.submitFeedback(ratings(4, 4, 4));
    expect(problems).toEqual(["feedback is closed for this session"]);
  });
});
