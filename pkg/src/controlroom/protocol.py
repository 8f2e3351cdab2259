"""Newline-delimited JSON wire protocol for live sessions.

Message envelope: {"type": ..., "t": ..., "seq": ..., "payload": {...}}.
Outbound: StateUpdate (every tick), AlarmEvent, Suggestion (only when the
revision changes), InterventionPrompt (on strategy change).  Inbound:
ControlAction, AckAi, SilenceAlarm, AckAlarm, ApproveAutomation,
RevokeAutomation.  A malformed inbound line is dropped and recorded; the
stream stays alive.

Inbound messages are applied at the next tick boundary; the tick loop is
the single writer of plant and log state.
"""

from __future__ import annotations

import json
import math
import queue
import threading
import time

from .errors import ProtocolError
from .plantsim import SupportMode, run_scenario
from .telemetry import ControlAction

OUTBOUND_TYPES = ("StateUpdate", "AlarmEvent", "Suggestion", "InterventionPrompt")
# OpenProcedure/OpenMimic let remote sessions log screen navigation the
# way the synthetic-operator path does (the HMI interaction counters).
INBOUND_TYPES = ("ControlAction", "AckAi", "SilenceAlarm", "AckAlarm",
                 "ApproveAutomation", "RevokeAutomation",
                 "OpenProcedure", "OpenMimic")


def encode_message(msg_type: str, t: float, seq: int, payload: dict) -> str:
    return json.dumps(
        {"type": msg_type, "t": t, "seq": seq, "payload": payload},
        separators=(",", ":"),
    ) + "\n"


def decode_message(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from None
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("message lacks a type")
    if msg["type"] not in INBOUND_TYPES:
        raise ProtocolError(f"unknown inbound type {msg['type']!r}")
    msg.setdefault("payload", {})
    if not isinstance(msg["payload"], dict):
        raise ProtocolError("payload must be an object")
    return msg


def message_to_action(msg: dict) -> ControlAction:
    kind_map = {
        "ControlAction": "manual_control",
        "AckAi": "ack_ai",
        "SilenceAlarm": "silence_alarm",
        "AckAlarm": "ack_alarm",
        "ApproveAutomation": "approve_automation",
        "RevokeAutomation": "revoke_automation",
        "OpenProcedure": "open_procedure",
        "OpenMimic": "open_mimic",
    }
    payload = msg["payload"]
    msg_type = msg["type"]
    if msg_type == "ControlAction":
        try:
            return ControlAction(str(payload["actuator"]),
                                 float(payload["value"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad ControlAction payload: {exc}") from None
    if msg_type in ("SilenceAlarm", "AckAlarm"):
        alarm_id = payload.get("alarm_id")
        if not alarm_id:
            raise ProtocolError(f"{msg_type} needs alarm_id")
        return ControlAction(str(alarm_id), 1.0, kind=kind_map[msg_type])
    if msg_type in ("OpenProcedure", "OpenMimic"):
        target = payload.get("id", "")
        return ControlAction(str(target), 1.0, kind=kind_map[msg_type])
    return ControlAction("", 1.0, kind=kind_map[msg_type])


class RemoteOperator:
    """Adapter feeding queued protocol messages into the tick loop."""

    def __init__(self, inbound: queue.Queue):
        self.inbound = inbound

    def reset(self, rng):
        pass

    def act(self, view, suggestion):
        actions = []
        while True:
            try:
                msg = self.inbound.get_nowait()
            except queue.Empty:
                break
            actions.append(message_to_action(msg))
        return actions


class ProtocolPump:
    """Serializes tick outputs to the stream with monotonic sequencing."""

    def __init__(self, stream, tick_interval_s: float = 0.0):
        self.stream = stream
        self.tick_interval_s = tick_interval_s
        self.seq = 0
        self._last_revision = None
        self._last_strategy = None

    def _send(self, msg_type, t, payload):
        self.seq += 1
        self.stream.write(encode_message(msg_type, t, self.seq, payload))

    def on_tick(self, view, out, log):
        record = log.records[-1]
        values = {
            k: (None if isinstance(v, float) and math.isnan(v) else v)
            for k, v in record.values.items()
        }
        self._send("StateUpdate", view.t, {"values": values})
        for ev in view.new_alarm_events:
            self._send("AlarmEvent", view.t, {
                "alarm_id": ev.alarm_id, "kind": ev.kind,
                "severity": ev.severity,
            })
        if out is not None:
            suggestion = out.suggestion
            if suggestion is not None and suggestion.revision != self._last_revision:
                self._last_revision = suggestion.revision
                self._send("Suggestion", view.t, {
                    "revision": suggestion.revision,
                    "abnormality_id": suggestion.abnormality_id,
                    "procedure": list(suggestion.procedure),
                    "value_mode": suggestion.value_mode,
                    "value": suggestion.value,
                    "interval": [suggestion.interval.low, suggestion.interval.high],
                    "target_actuator": suggestion.target_actuator,
                })
            if suggestion is None:
                self._last_revision = None
            strategy = out.intervention.strategy
            if strategy != self._last_strategy:
                self._last_strategy = strategy
                self._send("InterventionPrompt", view.t, {
                    "strategy": strategy,
                    "rationale": out.intervention.rationale,
                })
        if hasattr(self.stream, "flush"):
            self.stream.flush()
        if self.tick_interval_s > 0:
            time.sleep(self.tick_interval_s)


class StreamReader:
    """Background line reader; malformed lines are logged, not fatal."""

    def __init__(self, stream):
        self.stream = stream
        self.messages: queue.Queue = queue.Queue()
        self.errors: list = []
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self):
        self._thread.start()
        return self

    def _run(self):
        while True:
            try:
                line = self.stream.readline()
            except (OSError, ValueError):
                break
            if not line:
                break
            line = line.strip()
            if not line:
                continue
            try:
                self.messages.put(decode_message(line))
            except ProtocolError as exc:
                self.errors.append(str(exc))


def serve(cfg, orchestrator, stream, *, participant_id: str = "remote",
          seed: int = 0, tick_interval_s: float = 0.0, group: str = None):
    """Run one live episode over a duplex text stream; returns the log."""
    session_group = group or orchestrator.session.group
    reader = StreamReader(stream).start()
    pump = ProtocolPump(stream, tick_interval_s)
    operator = RemoteOperator(reader.messages)
    orchestrator.reset_episode()
    support = SupportMode(group=session_group, mode=orchestrator.session.mode,
                          system=orchestrator)
    log = run_scenario(
        cfg, operator, support,
        participant_id=participant_id, seed=seed, on_tick=pump.on_tick,
    )
    log.protocol_errors = list(reader.errors)
    return log


def serve_tcp(cfg, orchestrator, port: int, *, host: str = "127.0.0.1",
              participant_id: str = "remote", seed: int = 0,
              tick_interval_s: float = 1.0, max_sessions: int = 1):
    """Accept TCP connections and run one session per connection."""
    import socket

    logs = []
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        for i in range(max_sessions):
            conn, _addr = server.accept()
            with conn:
                stream = conn.makefile("rw", encoding="utf-8", newline="\n")
                logs.append(serve(
                    cfg, orchestrator, stream,
                    participant_id=f"{participant_id}-{i}", seed=seed + i,
                    tick_interval_s=tick_interval_s,
                ))
    return logs
