"""Agent checkpoints: single-file npz with config echo and all tensors."""

from __future__ import annotations

import json

import numpy as np

from .agent import Td3Agent, Td3Config

FORMAT_VERSION = 1

_NETS = ("actor", "critic1", "critic2",
         "actor_target", "critic1_target", "critic2_target")


def save_agent(agent: Td3Agent, path, abnormality_id=None, rng_state=None):
    cfg = agent.cfg
    cfg_dict = {
        k: (list(v) if isinstance(v, (tuple, list, np.ndarray)) else v)
        for k, v in vars(cfg).items()
    }
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "config_json": np.array(json.dumps(cfg_dict)),
        "update_count": np.array(agent.update_count),
        "env_steps": np.array(agent.env_steps),
        "abnormality_id": np.array(abnormality_id or ""),
        "rng_state_json": np.array(json.dumps(rng_state) if rng_state else ""),
    }
    for net_name in _NETS:
        net = getattr(agent, net_name)
        for i, p in enumerate(net.params()):
            arrays[f"{net_name}__{i}"] = p
    np.savez(path, **arrays)


def load_agent(path):
    """Returns (agent, abnormality_id)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg_dict = json.loads(str(data["config_json"]))
        for key in ("hidden_sizes",):
            if key in cfg_dict and isinstance(cfg_dict[key], list):
                cfg_dict[key] = tuple(cfg_dict[key])
        cfg = Td3Config(**cfg_dict)
        agent = Td3Agent(cfg, seed=0)
        for net_name in _NETS:
            net = getattr(agent, net_name)
            for i, p in enumerate(net.params()):
                p[...] = data[f"{net_name}__{i}"]
        agent.update_count = int(data["update_count"])
        agent.env_steps = int(data["env_steps"])
        abnormality_id = str(data["abnormality_id"]) or None
    return agent, abnormality_id


def write_learning_curve(path, curve):
    """Learning-curve CSV: episode index and return."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "return"])
        for i, ret in enumerate(curve):
            writer.writerow([i, format(float(ret), ".9g")])
