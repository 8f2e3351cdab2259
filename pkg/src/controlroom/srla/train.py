"""Training loops for vanilla and specialized agents.

A specialized run interacts only on states passing the specialization
predicate; normal operation is fast-forwarded under the expert baseline.
Completed abnormal segments yield per-step discounted returns (n-step to
the segment end) that feed the residual update; the vanilla path is the
standard twin-delayed update on its own transitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agent import HistoryBuffer, SpecializationSpec, Td3Agent, Td3Config


@dataclass
class TrainResult:
    agent: Td3Agent
    curve: list = field(default_factory=list)       # per-episode return
    steps_used: int = 0
    eval_history: list = field(default_factory=list)  # (env_step, metric)
    reached_at: int | None = None                   # step the stop metric hit


def evaluate_tracking(agent, env, spec=None, p0_grid=(1.6, 2.0, 2.4)):
    """Mean absolute set-point error of the deterministic policy.

    Pass a dedicated env instance: evaluation resets it, so sharing the
    training env would corrupt an episode in progress.
    """
    errors = []
    for p0 in p0_grid:
        hist = HistoryBuffer(agent.cfg.history_len)
        try:
            y = env.reset(p0=p0)
        except TypeError:
            y = env.reset()
        a_prev = spec.expert_policy(None) if spec else np.zeros(env.action_dim)
        hist.push(y, a_prev)
        done = False
        while not done:
            s = hist.state()
            a = agent.act(s, explore=False)
            if spec is not None:
                a = np.clip(spec.expert_policy(s) + a,
                            env.action_low, env.action_high)
            y, _r, done = env.step(a)
            hist.push(y, a)
            errors.append(float(np.abs(y - env.y_setpoint).sum()))
    return float(np.mean(errors))


def discounted_returns(rewards, gamma):
    """R_t = r_t + gamma R_{t+1} within one segment."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def train(env, spec: SpecializationSpec | None, cfg: Td3Config, budget: int,
          *, seed: int = 0, warmup: int = 1000, actor_warmup: int = 900,
          eps_uniform: float = 0.1, updates_per_step: int = 2,
          eval_every: int | None = None, eval_fn=None,
          stop_threshold: float | None = None) -> TrainResult:
    """Run up to ``budget`` environment steps and return the trained agent.

    ``spec`` selects the specialized (residual, Monte-Carlo target) path;
    None trains a vanilla agent with the standard twin-delayed updates.
    Besides Gaussian policy noise, a small ``eps_uniform`` fraction of
    steps acts uniformly at random: Monte-Carlo targets need sustained
    action coverage or the critics lock into one-sided value surfaces.
    Policy updates start only after ``actor_warmup`` environment steps so
    the critics see varied returns before the actor commits.
    ``eval_fn(agent) -> metric`` is polled every ``eval_every`` steps on
    a caller-owned evaluation environment; the first step at which the
    metric drops to ``stop_threshold`` is recorded and training stops.
    """
    agent = Td3Agent(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    result = TrainResult(agent=agent)
    specialized = spec is not None

    steps = 0
    episode = 0
    while steps < budget:
        hist = HistoryBuffer(cfg.history_len)
        y = env.reset(rng)
        a0 = (spec.expert_policy(None) if specialized
              else np.zeros(cfg.action_dim))
        hist.push(y, a0)
        ep_return = 0.0
        done = False
        segment = []  # (state, action, reward, next_state, done)
        while not done and steps < budget:
            s = hist.state()
            if specialized:
                if rng.random() < eps_uniform:
                    residual = rng.uniform(agent.action_low, agent.action_high)
                else:
                    residual = agent.act(s, explore=True, rng=rng)
                a_exec = np.clip(spec.expert_policy(s) + residual,
                                 env.action_low, env.action_high)
            elif steps < warmup:
                a_exec = rng.uniform(env.action_low, env.action_high)
            elif rng.random() < eps_uniform:
                a_exec = rng.uniform(env.action_low, env.action_high)
            else:
                a_exec = agent.act(s, explore=True, rng=rng)
            y, r, done = env.step(a_exec)
            hist.push(y, a_exec)
            s_next = hist.state()
            ep_return += r
            steps += 1
            agent.env_steps = steps

            if specialized:
                segment.append((s, a_exec, r, s_next, done))
            else:
                agent.buffer.add(s, a_exec, r, s_next, done)
                if len(agent.buffer) >= max(warmup, cfg.batch_size):
                    batch = agent.buffer.sample(cfg.batch_size, rng)
                    agent.critic_update(batch, rng)
                    if steps >= actor_warmup:
                        agent.actor_update(batch)

            if eval_every and eval_fn and steps % eval_every == 0:
                metric = eval_fn(agent)
                result.eval_history.append((steps, metric))
                if (stop_threshold is not None and result.reached_at is None
                        and metric <= stop_threshold):
                    result.reached_at = steps
                    result.curve.append(ep_return)
                    result.steps_used = steps
                    return result

        if specialized and segment:
            rewards = [tr[2] for tr in segment]
            returns = discounted_returns(rewards, cfg.gamma)
            for (s, a, r, s_next, d), ret in zip(segment, returns):
                agent.buffer.add(s, a, r, s_next, d, ret=ret)
            if len(agent.buffer) >= cfg.batch_size:
                for _ in range(updates_per_step * len(segment)):
                    batch = agent.buffer.sample(cfg.batch_size, rng)
                    if steps < actor_warmup:
                        # Critic-only until the return surface is shaped.
                        agent.critic_update(batch, targets=batch["ret"])
                    else:
                        agent.srla_update(batch, spec,
                                          env_low=env.action_low,
                                          env_high=env.action_high)
        result.curve.append(ep_return)
        episode += 1

    result.steps_used = steps
    return result


def make_spec_for_env(env, abnormality_id="toy", predicate=None) -> SpecializationSpec:
    """Specialization spec with the env's static expert value as baseline."""
    expert = np.array(env.expert_value, dtype=float)
    return SpecializationSpec(
        abnormality_id=abnormality_id,
        predicate=predicate or (lambda s: True),
        expert_policy=lambda s: expert,
    )
