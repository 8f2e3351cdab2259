/**
 * Session state and gesture handling.
 *
 * The server is the source of truth; this store only mirrors the last
 * StateUpdate, tracks alarm and suggestion presentation state, and maps
 * each user gesture to exactly one protocol message.  The acknowledge
 * box blinks precisely while the live suggestion's revision is newer
 * than the last one the operator acknowledged.
 */

import {
  AlarmPayload,
  ClientMessage,
  InterventionPayload,
  ProtocolError,
  ServerMessage,
  StateValues,
  SuggestionPayload,
  Transport,
  decodeServerMessage,
  encodeClientMessage,
} from "./protocol.js";

export type Group = "GroupN" | "GroupAI";

export interface ActiveAlarm {
  alarmId: string;
  severity: "critical" | "warning";
  annunciatedAt: number;
  silenced: boolean;
  acknowledged: boolean;
}

export interface TrendPoint {
  t: number;
  values: StateValues;
}

/** Gestures repeated faster than this are treated as one press. */
const GESTURE_DEDUPE_MS = 300;

/** Client-side ring buffer span for trend plots (seconds). */
const TREND_SPAN_S = 600;

export class SessionStore {
  readonly group: Group;

  t = 0;
  values: StateValues = {};
  alarms = new Map<string, ActiveAlarm>();
  suggestion: SuggestionPayload | null = null;
  seenRevision = 0;
  intervention: InterventionPayload | null = null;
  trend: TrendPoint[] = [];
  protocolErrors: string[] = [];
  connected = false;
  openMimicId: string | null = null;
  openProcedureId: string | null = null;

  private transport: Transport | null = null;
  private seq = 0;
  private lastGesture = new Map<string, number>();
  private now: () => number;

  constructor(group: Group, now: () => number = () => Date.now()) {
    this.group = group;
    this.now = now;
  }

  /** True while the suggestion has a revision the operator has not seen. */
  get blink(): boolean {
    return this.suggestion !== null && this.suggestion.revision > this.seenRevision;
  }

  attach(transport: Transport): void {
    this.transport = transport;
    this.connected = true;
    transport.onLine((line) => this.handleLine(line));
    transport.onClose(() => {
      this.connected = false;
    });
  }

  handleLine(line: string): void {
    if (!line.trim()) return;
    let msg: ServerMessage;
    try {
      msg = decodeServerMessage(line);
    } catch (err) {
      if (err instanceof ProtocolError) {
        this.protocolErrors.push(err.message);
        return;
      }
      throw err;
    }
    this.handle(msg);
  }

  handle(msg: ServerMessage): void {
    this.t = msg.t;
    switch (msg.type) {
      case "StateUpdate": {
        this.values = msg.payload.values;
        this.trend.push({ t: msg.t, values: msg.payload.values });
        const cutoff = msg.t - TREND_SPAN_S;
        while (this.trend.length && this.trend[0].t < cutoff) {
          this.trend.shift();
        }
        break;
      }
      case "AlarmEvent":
        this.applyAlarm(msg.t, msg.payload);
        break;
      case "Suggestion":
        if (this.group === "GroupN") {
          // The server never sends these to GroupN sessions; refuse to
          // surface one if it ever did.
          this.protocolErrors.push("Suggestion received in a GroupN session");
          return;
        }
        this.suggestion = msg.payload;
        break;
      case "InterventionPrompt":
        this.intervention = msg.payload;
        break;
    }
  }

  private applyAlarm(t: number, payload: AlarmPayload): void {
    const existing = this.alarms.get(payload.alarm_id);
    switch (payload.kind) {
      case "annunciated":
        this.alarms.set(payload.alarm_id, {
          alarmId: payload.alarm_id,
          severity: payload.severity,
          annunciatedAt: t,
          silenced: false,
          acknowledged: false,
        });
        break;
      case "silenced":
        if (existing) existing.silenced = true;
        break;
      case "acknowledged":
        if (existing) existing.acknowledged = true;
        break;
      case "cleared":
        this.alarms.delete(payload.alarm_id);
        break;
    }
  }

  // -- gestures: one protocol message each ---------------------------------

  private sendOnce(key: string, msg: ClientMessage): boolean {
    const now = this.now();
    const last = this.lastGesture.get(key);
    if (last !== undefined && now - last < GESTURE_DEDUPE_MS) {
      return false;
    }
    this.lastGesture.set(key, now);
    if (!this.transport) return false;
    this.seq += 1;
    this.transport.send(encodeClientMessage(msg, this.t, this.seq));
    return true;
  }

  /** Acknowledge the AI suggestion; clears the blink until the next
   * revision.  Disabled when no suggestion is shown. */
  acknowledgeSuggestion(): boolean {
    if (this.group === "GroupN" || this.suggestion === null) return false;
    if (!this.blink) return false;
    const revision = this.suggestion.revision;
    if (!this.sendOnce(`ack-ai:${revision}`, { type: "AckAi", payload: {} })) {
      return false;
    }
    this.seenRevision = revision;
    return true;
  }

  manualControl(actuator: string, value: number): boolean {
    return this.sendOnce(`control:${actuator}:${value}`, {
      type: "ControlAction",
      payload: { actuator, value },
    });
  }

  silenceAlarm(alarmId: string): boolean {
    const alarm = this.alarms.get(alarmId);
    if (!alarm || alarm.silenced) return false;
    return this.sendOnce(`silence:${alarmId}`, {
      type: "SilenceAlarm",
      payload: { alarm_id: alarmId },
    });
  }

  ackAlarm(alarmId: string): boolean {
    const alarm = this.alarms.get(alarmId);
    if (!alarm || alarm.acknowledged) return false;
    return this.sendOnce(`ack:${alarmId}`, {
      type: "AckAlarm",
      payload: { alarm_id: alarmId },
    });
  }

  approveAutomation(): boolean {
    return this.sendOnce("approve", { type: "ApproveAutomation", payload: {} });
  }

  revokeAutomation(): boolean {
    return this.sendOnce("revoke", { type: "RevokeAutomation", payload: {} });
  }

  openProcedure(id: string): boolean {
    if (!this.sendOnce(`open-proc:${id}`, {
      type: "OpenProcedure",
      payload: { id },
    })) {
      return false;
    }
    this.openProcedureId = id;
    return true;
  }

  openMimic(id: string): boolean {
    if (!this.sendOnce(`open-mimic:${id}`, {
      type: "OpenMimic",
      payload: { id },
    })) {
      return false;
    }
    this.openMimicId = id;
    return true;
  }
}
