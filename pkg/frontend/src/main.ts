/**
 * Browser entry point: connect, mirror server state, render at 1 Hz.
 *
 * The DOM is rebuilt from the layout tree each render; the server owns
 * all state, so a reload resynchronizes from the next StateUpdate.
 */

import { RenderNode, buildLayout } from "./layout.js";
import { Group, SessionStore } from "./store.js";
import { WebSocketTransport } from "./transports.js";

const RENDER_INTERVAL_MS = 1000;
const BACKOFF_STEPS_MS = [1000, 2000, 5000, 10000];

export function startHmi(root: HTMLElement, endpoint: string, group: Group): void {
  const store = new SessionStore(group);
  let attempt = 0;

  const connect = () => {
    const transport = new WebSocketTransport(endpoint);
    store.attach(transport);
    transport.onClose(() => {
      const delay = BACKOFF_STEPS_MS[Math.min(attempt, BACKOFF_STEPS_MS.length - 1)];
      attempt += 1;
      setTimeout(connect, delay);
    });
  };
  connect();

  setInterval(() => {
    render(root, store);
  }, RENDER_INTERVAL_MS);
}

function render(root: HTMLElement, store: SessionStore): void {
  root.textContent = "";
  if (!store.connected) {
    const banner = document.createElement("div");
    banner.className = "banner banner-error";
    banner.textContent = "Connection lost - retrying";
    root.appendChild(banner);
  }
  root.appendChild(materialize(buildLayout(store), store));
}

function materialize(node: RenderNode, store: SessionStore): HTMLElement {
  const el = document.createElement("div");
  el.className = node.kind;
  const props = node.props ?? {};
  for (const [key, value] of Object.entries(props)) {
    if (value !== null && typeof value !== "object") {
      el.dataset[key] = String(value);
    }
  }
  switch (node.kind) {
    case "suggestion-box":
      renderSuggestionBox(el, props, store);
      break;
    case "manual-control":
      renderManualControl(el, props, store);
      break;
    case "alarm-row":
      renderAlarmRow(el, props, store);
      break;
    case "trend":
      el.textContent = `${props.column}: ${formatValue(props.value)}`;
      break;
    case "procedure-step":
      el.textContent = String(props.text ?? "");
      break;
  }
  for (const child of node.children ?? []) {
    el.appendChild(materialize(child, store));
  }
  return el;
}

function renderSuggestionBox(
  el: HTMLElement,
  props: Record<string, unknown>,
  store: SessionStore,
): void {
  if (props.empty) {
    el.textContent = "No active suggestion";
    return;
  }
  const head = document.createElement("div");
  head.className = "suggestion-root-cause";
  head.textContent = `Predicted failure: ${props.rootCause}`;
  el.appendChild(head);

  const valueLine = document.createElement("div");
  const [lo, hi] = props.interval as [number, number];
  valueLine.className = "suggestion-value";
  valueLine.textContent =
    props.valueMode === "exact_value"
      ? `${props.targetActuator} -> ${formatValue(props.value)} (interval ${lo}..${hi})`
      : `${props.targetActuator} -> interval ${lo}..${hi}`;
  el.appendChild(valueLine);

  const ack = document.createElement("button");
  ack.className = props.blink ? "ack-button blink" : "ack-button";
  ack.textContent = "Acknowledge";
  ack.disabled = !props.ackEnabled;
  ack.onclick = () => store.acknowledgeSuggestion();
  el.appendChild(ack);
}

function renderManualControl(
  el: HTMLElement,
  props: Record<string, unknown>,
  store: SessionStore,
): void {
  const label = document.createElement("span");
  label.textContent = `${props.actuator}: ${formatValue(props.value)}`;
  el.appendChild(label);

  const input = document.createElement("input");
  input.type = "number";
  const apply = document.createElement("button");
  apply.textContent = "Set";
  apply.onclick = () => {
    const value = Number(input.value);
    if (Number.isFinite(value)) {
      store.manualControl(String(props.actuator), value);
    }
  };
  el.appendChild(input);
  el.appendChild(apply);
}

function renderAlarmRow(
  el: HTMLElement,
  props: Record<string, unknown>,
  store: SessionStore,
): void {
  const label = document.createElement("span");
  label.className = `alarm alarm-${props.severity}`;
  label.textContent = String(props.alarmId);
  el.appendChild(label);

  const silence = document.createElement("button");
  silence.textContent = "Silence";
  silence.disabled = !props.canSilence;
  silence.onclick = () => store.silenceAlarm(String(props.alarmId));
  el.appendChild(silence);

  const ack = document.createElement("button");
  ack.textContent = "Acknowledge";
  ack.disabled = !props.canAcknowledge;
  ack.onclick = () => store.ackAlarm(String(props.alarmId));
  el.appendChild(ack);
}

function formatValue(value: unknown): string {
  if (value === null || value === undefined) return "-";
  return Number(value).toFixed(3);
}
