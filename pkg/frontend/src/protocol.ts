/**
 * Wire protocol: newline-delimited JSON envelopes over one duplex stream.
 *
 * The server emits StateUpdate (every tick), AlarmEvent, Suggestion (only
 * when the revision changes), and InterventionPrompt.  The client sends
 * ControlAction, AckAi, SilenceAlarm, AckAlarm, ApproveAutomation, and
 * RevokeAutomation.
 */

export interface Envelope<T extends string, P> {
  type: T;
  t: number;
  seq: number;
  payload: P;
}

export interface StateValues {
  [column: string]: number | null;
}

export interface SuggestionPayload {
  revision: number;
  abnormality_id: string;
  procedure: Array<{
    text: string;
    target_actuator: string | null;
    expected_interval: [number, number] | null;
  }>;
  value_mode: "exact_value" | "interval_only";
  value: number | null;
  interval: [number, number];
  target_actuator: string;
}

export interface AlarmPayload {
  alarm_id: string;
  kind: "annunciated" | "silenced" | "acknowledged" | "cleared";
  severity: "critical" | "warning";
}

export interface InterventionPayload {
  strategy: string;
  rationale: {
    system_abnormal: boolean;
    human_failure_prob: number;
    task_load_proxy: number;
  };
}

export type ServerMessage =
  | Envelope<"StateUpdate", { values: StateValues }>
  | Envelope<"AlarmEvent", AlarmPayload>
  | Envelope<"Suggestion", SuggestionPayload>
  | Envelope<"InterventionPrompt", InterventionPayload>;

export type ClientMessage =
  | { type: "ControlAction"; payload: { actuator: string; value: number } }
  | { type: "AckAi"; payload: Record<string, never> }
  | { type: "SilenceAlarm"; payload: { alarm_id: string } }
  | { type: "AckAlarm"; payload: { alarm_id: string } }
  | { type: "ApproveAutomation"; payload: Record<string, never> }
  | { type: "RevokeAutomation"; payload: Record<string, never> }
  | { type: "OpenProcedure"; payload: { id: string } }
  | { type: "OpenMimic"; payload: { id: string } };

const SERVER_TYPES = new Set([
  "StateUpdate",
  "AlarmEvent",
  "Suggestion",
  "InterventionPrompt",
]);

export class ProtocolError extends Error {}

export function decodeServerMessage(line: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new ProtocolError(`malformed JSON: ${(err as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null) {
    throw new ProtocolError("message is not an object");
  }
  const msg = raw as { type?: string; payload?: unknown };
  if (!msg.type || !SERVER_TYPES.has(msg.type)) {
    throw new ProtocolError(`unknown server message type ${msg.type}`);
  }
  if (typeof msg.payload !== "object" || msg.payload === null) {
    throw new ProtocolError("payload must be an object");
  }
  return raw as ServerMessage;
}

export function encodeClientMessage(
  msg: ClientMessage,
  t: number,
  seq: number,
): string {
  return JSON.stringify({ type: msg.type, t, seq, payload: msg.payload }) + "\n";
}

/** Duplex line transport; implementations: WebSocket, TCP, test stubs. */
export interface Transport {
  send(line: string): void;
  onLine(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}
