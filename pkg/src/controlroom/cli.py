"""Command-line entry point.

Subcommands: simulate, gen-cohort, train-drl, train-hmm, predict,
analyze, serve, validate-config.  Every run writes a manifest (config
echo, parameters, seed, library versions, produced files) into --out so
the primary outputs are reproducible from the manifest alone.

Exit codes: 0 ok, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, analytics, figures, opstate, plantsim, srla
from .config import (
    AGENT_ACTUATORS,
    AGENT_Y_SOURCES,
    PROCEDURE_PLAN,
    default_config,
    load_config,
    load_default_diagram,
    load_default_procedures,
    profile_from_config,
    scenario_from_dict,
    thresholds_from_config,
    validate_config,
)
from .errors import ConfigError, ControlRoomError, ModelMissing
from .orchestrator import Orchestrator, SessionMode
from .telemetry import (
    NullOperator,
    SyntheticOperator,
    export_csv,
    import_csv,
    label_episode,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ConfigError, ModelMissing) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ControlRoomError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="controlroom",
        description="Desk-scale control-room decision support toolkit",
    )
    parser.set_defaults(command=None)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("simulate", help="run one scenario episode")
    common(p)
    p.add_argument("--scenario", required=True, choices=plantsim.SCENARIO_IDS)
    p.add_argument("--group", default="GroupAI", choices=("GroupN", "GroupAI"))
    p.add_argument("--profile", default="compliant")
    p.add_argument("--participant", default="P01")
    p.add_argument("--agents", default=None,
                   help="directory with trained agent checkpoints")
    p.add_argument("--hmm", default=None, help="operator-state model file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-cohort", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--scenario", default="s3", choices=plantsim.SCENARIO_IDS)
    p.add_argument("--group", default="GroupAI", choices=("GroupN", "GroupAI"))
    p.add_argument("--agents", default=None)
    p.set_defaults(func=cmd_gen_cohort)

    p = sub.add_parser("train-drl", help="train specialized agents")
    common(p)
    p.add_argument("--abnormality", default="all",
                   choices=("all", *AGENT_ACTUATORS))
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_train_drl)

    p = sub.add_parser("train-hmm", help="fit the operator-state model")
    common(p)
    p.add_argument("--data", required=True, help="gen-cohort output directory")
    p.set_defaults(func=cmd_train_hmm)

    p = sub.add_parser("predict", help="failure prediction over a cohort")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None,
                   help="model file (omit with --loo to refit per episode)")
    p.add_argument("--loo", action="store_true",
                   help="leave-one-episode-out evaluation")
    p.add_argument("--figures", type=int, default=6,
                   help="number of posterior trajectory figures")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="offline statistics over a cohort")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--corr-threshold", type=float, default=None)
    p.add_argument("--loading-threshold", type=float, default=None)
    p.add_argument("--elbow-rule", default=None,
                   choices=("curvature", "argmax", "threshold", "variance50"))
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="serve the live protocol over TCP")
    common(p)
    p.add_argument("--scenario", required=True, choices=plantsim.SCENARIO_IDS)
    p.add_argument("--group", default="GroupAI", choices=("GroupN", "GroupAI"))
    p.add_argument("--mode", default="operations",
                   choices=("operations", "training"))
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--agents", default=None)
    p.add_argument("--hmm", default=None)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--tick-interval", type=float, default=1.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("--config", default=None)
    p.add_argument("--emit-default", default=None, metavar="PATH",
                   help="write the default config to PATH and exit")
    p.set_defaults(func=cmd_validate_config)

    return parser


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def write_manifest(out_dir, command, params, config, outputs):
    import matplotlib
    import pandas as pd

    manifest = {
        "command": command,
        "parameters": params,
        "config": config,
        "versions": {
            "controlroom": __version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def scenario_from_args(cfg, scenario_id) -> plantsim.ScenarioConfig:
    return scenario_from_dict(cfg["scenarios"][scenario_id])


def make_agent_config(training_cfg, actuator) -> srla.Td3Config:
    lo, hi = plantsim.ACTUATOR_RANGES[actuator]
    half = 0.25 * (hi - lo)  # residual authority around the expert value
    l = int(training_cfg.get("history_len", 1))
    return srla.Td3Config(
        state_dim=(l + 1) * 2,
        action_low=[-half],
        action_high=[half],
        gamma=float(training_cfg.get("gamma", 0.99)),
        actor_lr=float(training_cfg.get("actor_lr", 1e-3)),
        critic_lr=float(training_cfg.get("critic_lr", 1e-3)),
        tau=float(training_cfg.get("tau", 0.005)),
        policy_delay=int(training_cfg.get("policy_delay", 2)),
        batch_size=int(training_cfg.get("batch_size", 64)),
        history_len=l,
        hidden_sizes=tuple(training_cfg.get("hidden_sizes", (64, 64))),
    )


def make_spec(abnormality) -> srla.SpecializationSpec:
    actuator = AGENT_ACTUATORS[abnormality]
    expert = np.array([plantsim.EXPERT_VALUES[actuator]])
    return srla.SpecializationSpec(
        abnormality_id=abnormality,
        predicate=lambda s: True,  # plant envs start at the fault onset
        expert_policy=lambda s: expert,
    )


def build_registry(cfg, agents_dir=None, fresh=False) -> srla.AgentRegistry:
    registry = srla.AgentRegistry()
    training_cfg = cfg.get("training", {})
    for abnormality, actuator in AGENT_ACTUATORS.items():
        agent = None
        if agents_dir:
            path = os.path.join(agents_dir, f"agent_{abnormality}.npz")
            if os.path.exists(path):
                agent, _ = srla.load_agent(path)
        if agent is None and fresh:
            agent = srla.Td3Agent(make_agent_config(training_cfg, actuator),
                                  seed=0)
        if agent is not None:
            registry.register(
                abnormality, agent, spec=make_spec(abnormality),
                actuator=actuator, y_source=AGENT_Y_SOURCES[abnormality],
            )
    return registry


def build_orchestrator(cfg, group, mode="operations", agents_dir=None,
                       hmm_path=None, fresh_agents=True) -> Orchestrator:
    diagram, meta = load_default_diagram()
    procedures = load_default_procedures()
    registry = build_registry(cfg, agents_dir, fresh=fresh_agents)
    if len(registry) == 0:
        raise ModelMissing("agent registry (no checkpoints found)")
    hmm_model = opstate.load_model(hmm_path) if hmm_path else None
    return Orchestrator(
        diagram, meta, procedures, registry, hmm_model=hmm_model,
        session=SessionMode(mode=mode, group=group),
        thresholds=thresholds_from_config(cfg),
    )


def make_operator(cfg, profile_name):
    profile = profile_from_config(cfg, profile_name)
    if profile.follow_mode == "none":
        return NullOperator()
    return SyntheticOperator(profile, procedure_plan=PROCEDURE_PLAN,
                             actuator_ranges=plantsim.ACTUATOR_RANGES)


def run_episode(cfg, scenario_id, group, profile_name, participant_id, seed,
                agents_dir=None, hmm_path=None):
    scenario = scenario_from_args(cfg, scenario_id)
    operator = make_operator(cfg, profile_name)
    system = None
    if group == "GroupAI":
        system = build_orchestrator(cfg, group, agents_dir=agents_dir,
                                    hmm_path=hmm_path)
    support = plantsim.SupportMode(group=group, mode="operations",
                                   system=system)
    return plantsim.run_scenario(
        scenario, operator, support,
        participant_id=participant_id, seed=seed,
    ), scenario


def episode_summary(log, scenario) -> dict:
    worst = max((c["kind"] for c in log.consequences),
                key=lambda k: analytics.CONSEQUENCE_ORDER.get(k, 0),
                default="safe_state")
    summary = {
        "participant_id": log.participant_id,
        "group": log.group,
        "scenario_id": log.scenario_id,
        "consequence": worst,
        "consequences": log.consequences,
        "recovery_status": analytics.recovery_status(
            log, scenario.critical_alarm_id),
        "toi_markers": log.toi_markers,
        "n_alarm_events": len(log.alarm_events),
        "n_hmi_events": len(log.hmi_events),
    }
    try:
        summary["behavioral"] = analytics.behavioral_measures(
            log, scenario.critical_alarm_id)
    except ControlRoomError:
        summary["behavioral"] = None
    label = label_episode(log, log.consequences)
    summary["failed"] = label.failed
    summary["failure_basis"] = label.basis
    return summary


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _ensure_out(args)
    log, scenario = run_episode(
        cfg, args.scenario, args.group, args.profile, args.participant,
        args.seed, agents_dir=args.agents, hmm_path=args.hmm,
    )
    episode_path = os.path.join(out, f"{log.participant_id}.csv")
    export_csv(log, episode_path)
    summary = episode_summary(log, scenario)
    summary_path = os.path.join(out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    fig = figures.episode_timeline(log, out)
    write_manifest(out, "simulate", {
        "scenario": args.scenario, "group": args.group,
        "profile": args.profile, "participant": args.participant,
        "seed": args.seed,
    }, cfg, [episode_path, summary_path, fig])
    print(f"consequence={summary['consequence']} "
          f"recovery_status={summary['recovery_status']}")
    return 0


def _allocate_profiles(mix, n, rng):
    """Stratified assignment: largest-remainder counts, shuffled order."""
    names = sorted(mix)
    weights = np.array([mix[k] for k in names], dtype=float)
    weights /= weights.sum()
    counts = np.floor(weights * n).astype(int)
    remainders = weights * n - counts
    for i in np.argsort(-remainders)[: n - counts.sum()]:
        counts[i] += 1
    assignment = [name for name, c in zip(names, counts) for _ in range(c)]
    return [assignment[i] for i in rng.permutation(n)]


def synth_questionnaire(profile_name, rng) -> dict:
    """Synthetic 1-7 ratings standing in for the questionnaire battery."""
    hard = profile_name in ("none", "sloppy")
    def draw(center, spread=0.8):
        return float(np.clip(rng.normal(center, spread), 1.0, 7.0))

    q = {}
    for dim in analytics.TLX_DIMENSIONS:
        q[dim] = draw(5.2 if hard else 3.0)
    for dim in analytics.SART_DIMENSIONS:
        q[dim] = draw(4.8 if hard else 3.8)
    for dim in analytics.SPAM_DIMENSIONS:
        q[dim] = draw(3.2 if hard else 4.6)
    q["task_load"] = draw(5.4 if hard else 3.2)
    q["ai_trust"] = draw(2.8 if hard else 5.2)
    q["ai_support"] = draw(3.0 if hard else 5.4)
    q["ai_explainability"] = draw(3.4 if hard else 4.9)
    q["ai_additional_load"] = draw(4.9 if hard else 3.1)
    return q


def cmd_gen_cohort(args) -> int:
    cfg = load_config(args.config)
    mix = cfg.get("profile_mix", {})
    if not mix:
        raise ConfigError("profile_mix is empty")
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"profile_mix weights sum to {total}, expected 1")
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    issues = validate_config(cfg)
    if issues:
        raise ConfigError("; ".join(issues))

    out = _ensure_out(args)
    episodes_dir = os.path.join(out, "episodes")
    os.makedirs(episodes_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    assignment = _allocate_profiles(mix, args.n, rng)

    outputs = []
    label_rows = []
    quest_rows = []
    per_episode_profiles = {}
    for i in range(args.n):
        pid = f"P{i + 1:02d}"
        profile_name = assignment[i]
        per_episode_profiles[pid] = profile_name
        log, scenario = run_episode(
            cfg, args.scenario, args.group, profile_name, pid,
            args.seed + 1000 + i, agents_dir=args.agents,
        )
        path = os.path.join(episodes_dir, f"{pid}.csv")
        export_csv(log, path)
        outputs.append(path)
        label = label_episode(log, log.consequences)
        consequence_t = log.consequences[0]["t"] if log.consequences else ""
        label_rows.append([pid, int(label.failed), label.basis,
                           log.consequences[0]["kind"] if log.consequences
                           else "safe_state", consequence_t])
        q = synth_questionnaire(profile_name, rng)
        quest_rows.append({"participant_id": pid,
                           "scenario_id": args.scenario, **q})

    labels_path = os.path.join(out, "labels.csv")
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["participant_id", "failed", "basis",
                         "consequence_kind", "consequence_t"])
        writer.writerows(label_rows)
    outputs.append(labels_path)

    quest_path = os.path.join(out, "questionnaire.csv")
    q_cols = ["participant_id", "scenario_id"] + [
        k for k in quest_rows[0] if k not in ("participant_id", "scenario_id")
    ]
    with open(quest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=q_cols)
        writer.writeheader()
        writer.writerows(quest_rows)
    outputs.append(quest_path)

    from .telemetry import write_dataset_manifest

    dataset_manifest = os.path.join(out, "dataset_manifest.json")
    write_dataset_manifest(dataset_manifest, {
        "hmm modeling": episodes_dir,
        "labels": labels_path,
        "questionnaires": quest_path,
        "merged normalized data": os.path.join(out, "analysis"),
    })
    outputs.append(dataset_manifest)

    write_manifest(out, "gen-cohort", {
        "n": args.n, "scenario": args.scenario, "group": args.group,
        "seed": args.seed, "profiles": per_episode_profiles,
    }, cfg, outputs)
    n_failed = sum(r[1] for r in label_rows)
    print(f"episodes={args.n} failed={n_failed}")
    return 0


def cmd_train_drl(args) -> int:
    cfg = load_config(args.config)
    out = _ensure_out(args)
    training_cfg = cfg.get("training", {})
    budget = args.budget or int(training_cfg.get("budget", 6000))
    abnormalities = (list(AGENT_ACTUATORS) if args.abnormality == "all"
                     else [args.abnormality])
    outputs = []
    report = {}
    for abnormality in abnormalities:
        env = srla.PlantScenarioEnv(abnormality)
        spec = make_spec(abnormality)
        agent_cfg = make_agent_config(training_cfg,
                                      AGENT_ACTUATORS[abnormality])
        result = srla.train(env, spec, agent_cfg, budget, seed=args.seed)
        path = os.path.join(out, f"agent_{abnormality}.npz")
        srla.save_agent(result.agent, path, abnormality_id=abnormality)
        curve_path = os.path.join(out, f"learning_curve_{abnormality}.csv")
        srla.write_learning_curve(curve_path, result.curve)
        fig = figures.learning_curve(result.curve, out,
                                     f"learning_curve_{abnormality}.png",
                                     label=abnormality)
        final_err = srla.evaluate_tracking(result.agent, env, spec)
        report[abnormality] = {
            "steps": result.steps_used,
            "episodes": len(result.curve),
            "final_mean_abs_error": final_err,
        }
        outputs.extend([path, curve_path, fig])
    report_path = os.path.join(out, "training_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    outputs.append(report_path)
    write_manifest(out, "train-drl", {
        "abnormality": args.abnormality, "budget": budget, "seed": args.seed,
    }, cfg, outputs)
    for abnormality, r in report.items():
        print(f"{abnormality}: steps={r['steps']} "
              f"final_err={r['final_mean_abs_error']:.4f}")
    return 0


def load_cohort(data_dir):
    """Episodes, labels, consequence times, questionnaires from gen-cohort
    output."""
    episodes_dir = os.path.join(data_dir, "episodes")
    if not os.path.isdir(episodes_dir):
        raise ConfigError(f"no episodes/ directory under {data_dir}")
    logs = []
    for name in sorted(os.listdir(episodes_dir)):
        if name.endswith(".csv"):
            logs.append(import_csv(os.path.join(episodes_dir, name)))
    labels = {}
    consequence_times = {}
    labels_path = os.path.join(data_dir, "labels.csv")
    if os.path.exists(labels_path):
        from .telemetry import FailureLabel

        with open(labels_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                pid = row["participant_id"]
                labels[pid] = FailureLabel(
                    pid, bool(int(row["failed"])), row["basis"])
                t = row.get("consequence_t", "")
                consequence_times[pid] = float(t) if t else None
    quests = {}
    quest_path = os.path.join(data_dir, "questionnaire.csv")
    if os.path.exists(quest_path):
        with open(quest_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["participant_id"], row["scenario_id"])
                quests[key] = {k: float(v) for k, v in row.items()
                               if k not in ("participant_id", "scenario_id")}
    return logs, labels, consequence_times, quests


def fit_operator_model(logs, labels, hp, seed, stride=3, restarts=4,
                       probe_iters=12, max_iter=40, tol=1e-3,
                       tau=0.7, k=5):
    """Preprocess + restart-selected HMM + failure state on a cohort.

    Observations are strided log ticks (stride echoed on the model so
    prediction and the live monitor sample consistently).
    """
    feature_columns = opstate.realtime_feature_columns(logs[0].columns)
    matrices = [opstate.episode_feature_matrix(log, feature_columns)[::stride]
                for log in logs]
    X = np.vstack(matrices)
    lengths = [m.shape[0] for m in matrices]
    pm = opstate.fit_preprocess(X, hp, feature_names=feature_columns)
    Z = opstate.transform(pm, X)
    label_list = [labels[log.participant_id] for log in logs]
    model, _sep = opstate.fit_failure_model(
        Z, lengths, label_list, hp, seed=seed, restarts=restarts,
        probe_iters=probe_iters, max_iter=max_iter, tol=tol, tau=tau, k=k,
    )
    model.preprocess = pm
    model.feature_names = tuple(feature_columns)
    model.feature_stride = stride
    z_episodes = []
    offset = 0
    for n in lengths:
        z_episodes.append(Z[offset:offset + n])
        offset += n
    return model, z_episodes


def episode_stream(log, model):
    """Strided, transformed observation rows plus their clock values."""
    features = opstate.episode_feature_matrix(log, list(model.feature_names))
    stride = model.feature_stride
    Z = opstate.transform(model.preprocess, features[::stride],
                          feature_names=model.feature_names)
    times = np.array([rec.t for rec in log.records])[::stride]
    return Z, times


def cmd_train_hmm(args) -> int:
    cfg = load_config(args.config)
    out = _ensure_out(args)
    logs, labels, _ctimes, _q = load_cohort(args.data)
    if not labels:
        raise ConfigError(f"{args.data} has no labels.csv")
    hp = opstate.HmmHyperparams(**cfg.get("hmm", {}))
    model, z_episodes = fit_operator_model(logs, labels, hp, args.seed,
                                           **cfg.get("hmm_fit", {}))
    model_path = os.path.join(out, "hmm_model.npz")
    opstate.save_model(model, model_path)
    occupancies = [
        opstate.state_posterior(model, Z)[0].mean(axis=0).tolist()
        for Z in z_episodes
    ]
    report_path = os.path.join(out, "training_report.json")
    opstate.write_training_report(report_path, model, extra={
        "n_episodes": len(logs),
        "feature_count": len(model.feature_names),
        "state_occupancies": {
            log.participant_id: occ
            for log, occ in zip(logs, occupancies)
        },
    })
    fig = figures.loglik_trace(model.loglik_trace, out)
    write_manifest(out, "train-hmm", {
        "data": args.data, "seed": args.seed,
    }, cfg, [model_path, report_path, fig])
    print(f"converged={model.converged} failure_state={model.failure_state} "
          f"iterations={len(model.loglik_trace)}")
    return 0


def run_loo_prediction(logs, labels, consequence_times, hp, seed,
                       tau, k, fit_options=None):
    """Leave-one-episode-out harness; returns per-episode alert times and
    the held-out posterior series."""
    alert_times = {}
    series = {}
    fit_options = fit_options or {}
    for i, held in enumerate(logs):
        train_logs = logs[:i] + logs[i + 1:]
        model, _ = fit_operator_model(train_logs, labels, hp, seed,
                                      **fit_options)
        Z, times = episode_stream(held, model)
        alerts = opstate.predict_failure(model, model.failure_state, Z,
                                         tau=tau, k=k, times=times)
        alert_times[held.participant_id] = opstate.first_alert_time(alerts)
        series[held.participant_id] = alerts
    return alert_times, series


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    out = _ensure_out(args)
    logs, labels, consequence_times, _q = load_cohort(args.data)
    if not labels:
        raise ConfigError(f"{args.data} has no labels.csv")
    tau = float(cfg["predict"].get("tau", 0.7))
    k = int(cfg["predict"].get("k", 5))
    hp = opstate.HmmHyperparams(**cfg.get("hmm", {}))

    fit_options = dict(cfg.get("hmm_fit", {}))

    if args.loo:
        protocol = "leave-one-episode-out refit"
        alert_times, series = run_loo_prediction(
            logs, labels, consequence_times, hp, args.seed, tau, k,
            fit_options=fit_options)
    else:
        if not args.model:
            raise ConfigError("--model required unless --loo is set")
        protocol = "fixed model over all episodes"
        model = opstate.load_model(args.model)
        alert_times, series = {}, {}
        for log in logs:
            Z, times = episode_stream(log, model)
            alerts = opstate.predict_failure(model, model.failure_state, Z,
                                             tau=tau, k=k, times=times)
            alert_times[log.participant_id] = opstate.first_alert_time(alerts)
            series[log.participant_id] = alerts

    metrics = opstate.eval_accuracy(alert_times, labels, consequence_times)
    outputs = []
    pred_path = os.path.join(out, "predictions.csv")
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["participant_id", "alert_t", "failed",
                         "consequence_t"])
        for log in logs:
            pid = log.participant_id
            writer.writerow([
                pid,
                "" if alert_times[pid] is None else alert_times[pid],
                int(labels[pid].failed),
                "" if consequence_times.get(pid) is None
                else consequence_times[pid],
            ])
    outputs.append(pred_path)
    report_path = os.path.join(out, "prediction_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"protocol": protocol, "tau": tau, "k": k, **metrics},
                  fh, indent=2)
        fh.write("\n")
    outputs.append(report_path)
    for log in logs[: args.figures]:
        pid = log.participant_id
        outputs.append(figures.failure_posterior(
            series[pid], out, f"posterior_{pid}.png",
            consequence_t=consequence_times.get(pid),
        ))
    write_manifest(out, "predict", {
        "data": args.data, "loo": args.loo, "model": args.model,
        "seed": args.seed, "tau": tau, "k": k,
    }, cfg, outputs)
    print(f"protocol: {protocol}")
    print(f"accuracy={metrics['accuracy']:.3f} "
          f"recall={metrics['recall']:.3f} "
          f"median_lead={metrics['median_lead_time']}")
    return 0


def cmd_analyze(args) -> int:
    import pandas as pd

    cfg = load_config(args.config)
    out = _ensure_out(args)
    acfg = cfg.get("analytics", {})
    corr_threshold = (args.corr_threshold if args.corr_threshold is not None
                      else acfg.get("corr_threshold", 0.4))
    loading_threshold = (args.loading_threshold
                         if args.loading_threshold is not None
                         else acfg.get("loading_threshold", 0.4))
    elbow_rule = args.elbow_rule or acfg.get("elbow_rule", "curvature")

    logs, labels, _ctimes, quests = load_cohort(args.data)
    table = analytics.build_participant_table(
        logs, questionnaires=quests, sart_mode=acfg.get("sart_mode", "literal"))

    # Overall performance classes from recovery-time percentiles, per scenario.
    classes = {}
    for sid, block in table.groupby("scenario_id"):
        times = {
            row.participant_id: (row.recovery_time,
                                 bool(row.recovery_censored))
            for row in block.itertuples()
            if not (isinstance(row.recovery_time, float)
                    and np.isnan(row.recovery_time))
        }
        if len(times) >= 3:
            classes.update(analytics.performance_class(times))
    table["overall_performance"] = [
        analytics.STATUS_ORDER.get(classes.get(pid), np.nan)
        for pid in table["participant_id"]
    ]

    scaled = analytics.minmax_by_scenario(table)
    aggregated = analytics.aggregate_participant(scaled)
    outputs = []
    agg_path = os.path.join(out, "aggregated.csv")
    aggregated.to_csv(agg_path, index=False)
    outputs.append(agg_path)

    graph = analytics.correlation_graph(aggregated, threshold=corr_threshold)
    edges_path = os.path.join(out, "correlation_edges.csv")
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric_a", "metric_b", "weight"])
        for a, b, w in graph.edges:
            writer.writerow([a, b, format(w, ".6f")])
    outputs.append(edges_path)

    fm = analytics.factor_analysis(
        aggregated, loading_threshold=loading_threshold,
        elbow_rule=elbow_rule)
    factor_path = os.path.join(out, "factor_report.json")
    with open(factor_path, "w", encoding="utf-8") as fh:
        json.dump({
            "elbow": fm.elbow,
            "elbow_rule": fm.elbow_rule,
            "candidates": fm.candidates,
            "low_confidence": fm.low_confidence,
            "argmax_index": fm.argmax_index,
            "eigenvalues": fm.eigenvalues.tolist(),
            "cumulative_variance": fm.cumulative_variance.tolist(),
            "second_differences": fm.second_differences.tolist(),
            "strong_loadings": fm.strong_loadings,
            "dropped_columns": fm.dropped_columns,
        }, fh, indent=2)
        fh.write("\n")
    outputs.append(factor_path)

    comparison = None
    groups = set(table["group"])
    if {"GroupN", "GroupAI"} <= groups:
        a = aggregated[aggregated["group"] == "GroupN"]
        b = aggregated[aggregated["group"] == "GroupAI"]
        comparison = analytics.report(a, b)
    comp_path = os.path.join(out, "comparison.json")
    with open(comp_path, "w", encoding="utf-8") as fh:
        json.dump(comparison or {"note": "single-group cohort"}, fh, indent=2)
        fh.write("\n")
    outputs.append(comp_path)

    outputs.append(figures.scree_plot(fm, out))
    outputs.append(figures.correlation_heatmap(aggregated, out))
    if comparison:
        radar = figures.group_radar(comparison, out)
        if radar:
            outputs.append(radar)
    loading_entries = []
    for j, entries in enumerate(fm.strong_loadings):
        loading_entries.append({
            "component": j,
            "positive": [(n, v) for n, v in entries if v > 0],
            "negative": [(n, v) for n, v in entries if v < 0],
        })
    outputs.extend(figures.factor_loadings_bars(loading_entries, out,
                                                name_prefix="factor_loadings_f"))

    write_manifest(out, "analyze", {
        "data": args.data, "seed": args.seed,
        "corr_threshold": corr_threshold,
        "loading_threshold": loading_threshold,
        "elbow_rule": elbow_rule,
    }, cfg, outputs)
    print(f"rows={len(table)} participants={aggregated.shape[0]} "
          f"edges={len(graph.edges)} elbow={fm.elbow}")
    return 0


def cmd_serve(args) -> int:
    from .protocol import serve_tcp

    cfg = load_config(args.config)
    _ensure_out(args)
    scenario = scenario_from_args(cfg, args.scenario)
    orchestrator = build_orchestrator(
        cfg, args.group, mode=args.mode, agents_dir=args.agents,
        hmm_path=args.hmm, fresh_agents=False,
    )
    print(f"serving {args.scenario} ({args.group}) on port {args.port}")
    logs = serve_tcp(
        cfg=scenario, orchestrator=orchestrator, port=args.port,
        seed=args.seed, tick_interval_s=args.tick_interval,
        max_sessions=args.sessions,
    )
    out = _ensure_out(args)
    outputs = []
    for log in logs:
        path = os.path.join(out, f"{log.participant_id}.csv")
        export_csv(log, path)
        outputs.append(path)
    write_manifest(out, "serve", {
        "scenario": args.scenario, "group": args.group, "port": args.port,
        "seed": args.seed, "sessions": args.sessions,
    }, cfg, outputs)
    return 0


def cmd_validate_config(args) -> int:
    if args.emit_default:
        with open(args.emit_default, "w", encoding="utf-8") as fh:
            json.dump(default_config(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote default config to {args.emit_default}")
        return 0
    cfg = load_config(args.config)
    issues = validate_config(cfg)
    if issues:
        for issue in issues:
            print(f"invalid: {issue}", file=sys.stderr)
        return 2
    print("config ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
