/**
 * Render model: a plain tree describing what the screens show.
 *
 * Keeping layout as data makes the group-dependent structure testable
 * without a browser; the DOM layer in main.ts materializes this tree
 * verbatim.  GroupN support panels carry the procedures screen only;
 * GroupAI adds the suggestion box with its blinking acknowledge control.
 */

import { SessionStore } from "./store.js";

export interface RenderNode {
  kind: string;
  props?: Record<string, unknown>;
  children?: RenderNode[];
}

const OVERVIEW_COLUMNS = [
  "PSERB_1",
  "LSERB_1",
  "FN2serb1O_1",
  "MVAPrec3_1",
  "MAssWatFlowO_1",
  "MliqbolO_1",
];

const MIMICS = [
  { id: "feed", label: "Feed section", actuators: ["MmanNit_1", "MNitsel_1", "MWpopOld_1"] },
  { id: "recovery", label: "Heat recovery", actuators: ["MAssWatFlowO_1", "REC3WMO_1"] },
  { id: "reaction", label: "Reaction and separation", actuators: ["MCReatTempOld_1"] },
];

export function buildLayout(store: SessionStore): RenderNode {
  const children: RenderNode[] = [
    overviewPanel(store),
    mimicPanel(store),
    alarmPanel(store),
    procedurePanel(store),
  ];
  if (store.group === "GroupAI") {
    children.push(suggestionBox(store));
  }
  return { kind: "screen", props: { group: store.group, t: store.t }, children };
}

function overviewPanel(store: SessionStore): RenderNode {
  return {
    kind: "overview",
    children: OVERVIEW_COLUMNS.map((column) => ({
      kind: "trend",
      props: {
        column,
        value: store.values[column] ?? null,
        history: store.trend.map((p) => [p.t, p.values[column] ?? null]),
      },
    })),
  };
}

function mimicPanel(store: SessionStore): RenderNode {
  return {
    kind: "mimics",
    children: MIMICS.map((mimic) => ({
      kind: "mimic",
      props: { id: mimic.id, label: mimic.label },
      children: mimic.actuators.map((actuator) => ({
        kind: "manual-control",
        props: { actuator, value: store.values[actuator] ?? null },
      })),
    })),
  };
}

function alarmPanel(store: SessionStore): RenderNode {
  const rows = [...store.alarms.values()].sort(
    (a, b) => a.annunciatedAt - b.annunciatedAt,
  );
  return {
    kind: "alarm-list",
    children: rows.map((alarm) => ({
      kind: "alarm-row",
      props: {
        alarmId: alarm.alarmId,
        severity: alarm.severity,
        silenced: alarm.silenced,
        acknowledged: alarm.acknowledged,
        canSilence: !alarm.silenced,
        canAcknowledge: !alarm.acknowledged,
      },
    })),
  };
}

function procedurePanel(store: SessionStore): RenderNode {
  return {
    kind: "procedures",
    props: {
      alarms: [...store.alarms.keys()],
    },
  };
}

function suggestionBox(store: SessionStore): RenderNode {
  const suggestion = store.suggestion;
  if (suggestion === null) {
    return { kind: "suggestion-box", props: { empty: true, blink: false } };
  }
  return {
    kind: "suggestion-box",
    props: {
      empty: false,
      blink: store.blink,
      rootCause: suggestion.abnormality_id,
      valueMode: suggestion.value_mode,
      value: suggestion.value,
      interval: suggestion.interval,
      targetActuator: suggestion.target_actuator,
      revision: suggestion.revision,
      ackEnabled: store.blink,
    },
    children: suggestion.procedure.map((step) => ({
      kind: "procedure-step",
      props: {
        text: step.text,
        actuator: step.target_actuator,
        interval: step.expected_interval,
      },
    })),
  };
}

export function findNodes(root: RenderNode, kind: string): RenderNode[] {
  const out: RenderNode[] = [];
  const walk = (node: RenderNode) => {
    if (node.kind === kind) out.push(node);
    (node.children ?? []).forEach(walk);
  };
  walk(root);
  return out;
}
