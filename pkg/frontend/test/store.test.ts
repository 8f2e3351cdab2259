import { beforeEach, describe, expect, it } from "vitest";

import { buildLayout, findNodes } from "../src/layout.js";
import { SessionStore } from "../src/store.js";
import { StubOrchestrator } from "./stub.js";

let clock = 0;
const now = () => clock;

function connected(group: "GroupN" | "GroupAI" = "GroupAI") {
  const stub = new StubOrchestrator();
  const store = new SessionStore(group, now);
  store.attach(stub);
  return { stub, store };
}

beforeEach(() => {
  clock = 0;
});

describe("blink invariant", () => {
  it("blinks exactly while a revision is unseen", () => {
    const { stub, store } = connected();
    expect(store.blink).toBe(false);

    stub.suggestion(10, 1);
    expect(store.blink).toBe(true);

    clock += 1000;
    expect(store.acknowledgeSuggestion()).toBe(true);
    expect(store.blink).toBe(false);

    // same revision re-broadcast must not resume blinking
    stub.suggestion(11, 1);
    expect(store.blink).toBe(false);

    // a content change bumps the revision and resumes blinking
    stub.suggestion(12, 2);
    expect(store.blink).toBe(true);
  });

  it("acknowledge is a no-op without an unseen revision", () => {
    const { stub, store } = connected();
    expect(store.acknowledgeSuggestion()).toBe(false);
    expect(stub.received).toHaveLength(0);

    stub.suggestion(5, 1);
    clock += 1000;
    expect(store.acknowledgeSuggestion()).toBe(true);
    clock += 1000;
    expect(store.acknowledgeSuggestion()).toBe(false);
    expect(stub.received).toHaveLength(1);
  });
});

describe("gesture to message mapping", () => {
  it("each gesture emits exactly one protocol message", () => {
    const { stub, store } = connected();
    stub.suggestion(1, 1);
    stub.alarm(2, "All2_01", "annunciated");

    clock += 1000;
    store.acknowledgeSuggestion();
    clock += 1000;
    store.manualControl("MmanNit_1", 6.5);
    clock += 1000;
    store.silenceAlarm("All2_01");
    clock += 1000;
    store.ackAlarm("All2_01");
    clock += 1000;
    store.approveAutomation();
    clock += 1000;
    store.revokeAutomation();

    expect(stub.received.map((m) => m.type)).toEqual([
      "AckAi",
      "ControlAction",
      "SilenceAlarm",
      "AckAlarm",
      "ApproveAutomation",
      "RevokeAutomation",
    ]);
  });

  it("double-clicks collapse to one message", () => {
    const { stub, store } = connected();
    stub.suggestion(1, 1);
    clock += 1000;
    store.acknowledgeSuggestion();
    store.acknowledgeSuggestion();
    clock += 50; // inside the dedupe window
    store.manualControl("MmanNit_1", 6.5);
    clock += 100;
    store.manualControl("MmanNit_1", 6.5);
    expect(stub.received.map((m) => m.type)).toEqual(["AckAi", "ControlAction"]);
  });

  it("AckAi lands in the stub's HMI log", () => {
    const { stub, store } = connected();
    stub.suggestion(1, 1);
    clock += 1000;
    store.acknowledgeSuggestion();
    expect(stub.hmiLog).toContain("ai_acknowledged");
  });

  it("approve then revoke in order", () => {
    const { stub, store } = connected();
    store.approveAutomation();
    clock += 1000;
    store.revokeAutomation();
    expect(stub.hmiLog).toEqual(["automation_approved", "automation_revoked"]);
  });

  it("screen navigation emits one message and tracks the open screen", () => {
    const { stub, store } = connected();
    store.openMimic("feed");
    clock += 1000;
    store.openProcedure("All2_01");
    expect(stub.hmiLog).toEqual(["mimic_opened", "procedure_opened"]);
    expect(store.openMimicId).toBe("feed");
    expect(store.openProcedureId).toBe("All2_01");
  });

  it("control value payload round-trips", () => {
    const { stub, store } = connected();
    store.manualControl("MWpopOld_1", 0.25);
    expect(stub.received[0]).toMatchObject({
      type: "ControlAction",
      payload: { actuator: "MWpopOld_1", value: 0.25 },
    });
  });

  it("silence disabled for inactive or already-silenced alarms", () => {
    const { stub, store } = connected();
    expect(store.silenceAlarm("All2_01")).toBe(false);
    stub.alarm(1, "All2_01", "annunciated");
    clock += 1000;
    expect(store.silenceAlarm("All2_01")).toBe(true);
    stub.alarm(2, "All2_01", "silenced");
    clock += 1000;
    expect(store.silenceAlarm("All2_01")).toBe(false);
    expect(stub.received).toHaveLength(1);
  });
});

describe("server state mirroring", () => {
  it("state updates refresh values and feed the trend buffer", () => {
    const { stub, store } = connected();
    stub.stateUpdate(1, { PSERB_1: 2.0 });
    stub.stateUpdate(2, { PSERB_1: 1.95 });
    expect(store.values["PSERB_1"]).toBe(1.95);
    expect(store.trend).toHaveLength(2);
  });

  it("trend buffer drops samples older than ten minutes", () => {
    const { stub, store } = connected();
    stub.stateUpdate(1, { PSERB_1: 2.0 });
    stub.stateUpdate(700, { PSERB_1: 1.9 });
    expect(store.trend.map((p) => p.t)).toEqual([700]);
  });

  it("alarm lifecycle add, flag, and clear", () => {
    const { stub, store } = connected();
    stub.alarm(1, "All2_01", "annunciated");
    stub.alarm(2, "All2_01", "acknowledged");
    expect(store.alarms.get("All2_01")?.acknowledged).toBe(true);
    stub.alarm(3, "All2_01", "cleared");
    expect(store.alarms.has("All2_01")).toBe(false);
  });

  it("malformed lines are recorded and skipped", () => {
    const { stub, store } = connected();
    stub.emitRaw("this is not json");
    stub.stateUpdate(1, { PSERB_1: 2.0 });
    expect(store.protocolErrors).toHaveLength(1);
    expect(store.values["PSERB_1"]).toBe(2.0);
  });
});

describe("layout by group", () => {
  it("GroupN renders no suggestion box", () => {
    const { store } = connected("GroupN");
    const layout = buildLayout(store);
    expect(findNodes(layout, "suggestion-box")).toHaveLength(0);
    expect(findNodes(layout, "procedures")).toHaveLength(1);
  });

  it("GroupAI renders the suggestion box with blink state", () => {
    const { stub, store } = connected("GroupAI");
    stub.suggestion(1, 3);
    const layout = buildLayout(store);
    const boxes = findNodes(layout, "suggestion-box");
    expect(boxes).toHaveLength(1);
    expect(boxes[0].props).toMatchObject({ blink: true, revision: 3 });
    expect(findNodes(layout, "procedure-step")).toHaveLength(1);
  });

  it("GroupN refuses stray suggestions", () => {
    const { stub, store } = connected("GroupN");
    stub.suggestion(1, 1);
    expect(store.suggestion).toBeNull();
    expect(store.protocolErrors).toHaveLength(1);
  });

  it("interval-only suggestions carry no exact value", () => {
    const { stub, store } = connected("GroupAI");
    stub.suggestion(1, 1, null);
    const box = findNodes(buildLayout(store), "suggestion-box")[0];
    expect(box.props).toMatchObject({ valueMode: "interval_only", value: null });
  });
});
