"""Twin-delayed deterministic policy gradient with residual specialization.

The agent follows the standard twin-critic scheme: both critics regress
to the shared target

    y = r + gamma * (1 - d) * min(Q1_target, Q2_target)(s', pi_target(s') + clipped noise)

and the actor ascends Q1(s, pi(s)) every ``policy_delay`` critic updates,
followed by a soft target update.  A specialized agent instead learns a
residual action on top of a static expert baseline: the critic regresses
Q(s*, a_expert + a_residual) toward the observed within-segment
discounted return and the actor maximizes that same composite-value
surface, so training only ever sees states passing the specialization
predicate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import (
    DimensionMismatch,
    NoAgentForAbnormality,
    NonFiniteLoss,
    StateNotSpecialized,
)
from .nets import Critic, SquashedActor, make_optimizer
from .replay import ReplayBuffer


@dataclass
class Td3Config:
    state_dim: int
    action_low: float | list = 0.0
    action_high: float | list = 1.0
    gamma: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.1   # action units
    target_noise_clip: float = 0.25   # action units
    batch_size: int = 64
    history_len: int = 1              # l: pairs of history kept beyond current
    hidden_sizes: tuple = (64, 64)
    m_y: int = 1                      # tracked process variables
    buffer_capacity: int = 100_000
    exploration_sigma: float = 0.1    # initial, as a fraction of the range
    exploration_sigma_final: float = 0.05
    exploration_decay_steps: int = 10_000
    optimizer: str = "adam"
    # Pre-squash logit regularization keeps the tanh output responsive;
    # 0 gives the bare policy-ascent objective.
    logit_penalty: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        low = np.atleast_1d(np.asarray(self.action_low, dtype=float))
        high = np.atleast_1d(np.asarray(self.action_high, dtype=float))
        if np.any(low >= high):
            raise ValueError("action_low must be < action_high")

    @property
    def action_dim(self) -> int:
        return np.atleast_1d(np.asarray(self.action_low)).size


def assemble_state(history, l, y_dim=None, a_dim=None):
    """Flatten the last l+1 (y, a_expert) pairs, most recent last.

    ``history`` is a sequence of (y, a) pairs; if shorter than l+1 the
    oldest pair is repeated to fill.
    """
    pairs = list(history)
    if not pairs:
        raise DimensionMismatch("history buffer is empty")
    while len(pairs) < l + 1:
        pairs.insert(0, pairs[0])
    pairs = pairs[-(l + 1):]
    flat = []
    for y, a in pairs:
        flat.extend(np.atleast_1d(np.asarray(y, dtype=float)))
        flat.extend(np.atleast_1d(np.asarray(a, dtype=float)))
    return np.asarray(flat)


class HistoryBuffer:
    """Keeps the (y, a_expert) pairs feeding assemble_state."""

    def __init__(self, l):
        self.l = l
        self.pairs = deque(maxlen=l + 1)

    def push(self, y, a):
        self.pairs.append((np.atleast_1d(y).copy(), np.atleast_1d(a).copy()))

    def state(self):
        return assemble_state(self.pairs, self.l)

    def clear(self):
        self.pairs.clear()


def reward(y, y_sp) -> float:
    """Negative l1 norm of the set-point error; zero only on exact tracking."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_sp = np.atleast_1d(np.asarray(y_sp, dtype=float))
    if y.shape != y_sp.shape:
        raise DimensionMismatch(f"shape {y.shape} vs {y_sp.shape}")
    return -float(np.abs(y - y_sp).sum())


@dataclass
class SpecializationSpec:
    """Marks the states an agent specializes in and its expert baseline."""

    abnormality_id: str
    predicate: object                 # callable(state_vector) -> bool
    expert_policy: object             # callable(state_vector) -> action array

    def expert_batch(self, states):
        return np.stack([np.atleast_1d(self.expert_policy(s)) for s in states])

    def check_batch(self, states):
        bad = [i for i, s in enumerate(states) if not self.predicate(s)]
        if bad:
            raise StateNotSpecialized(
                f"batch rows {bad} fail the specialization predicate"
            )


class Td3Agent:
    """Actor, twin critics, their targets, and a replay buffer."""

    def __init__(self, cfg: Td3Config, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        low = np.atleast_1d(np.asarray(cfg.action_low, dtype=float))
        high = np.atleast_1d(np.asarray(cfg.action_high, dtype=float))
        self.action_low = low
        self.action_high = high
        hid = list(cfg.hidden_sizes)
        self.actor = SquashedActor(cfg.state_dim, low, high, hid, rng)
        self.critic1 = Critic(cfg.state_dim, cfg.action_dim, hid, rng)
        self.critic2 = Critic(cfg.state_dim, cfg.action_dim, hid, rng)
        self.actor_target = SquashedActor(cfg.state_dim, low, high, hid, rng)
        self.critic1_target = Critic(cfg.state_dim, cfg.action_dim, hid, rng)
        self.critic2_target = Critic(cfg.state_dim, cfg.action_dim, hid, rng)
        self.actor_target.net.copy_from(self.actor.net)
        self.critic1_target.net.copy_from(self.critic1.net)
        self.critic2_target.net.copy_from(self.critic2.net)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, cfg.state_dim, cfg.action_dim)
        self.actor_opt = make_optimizer(cfg.optimizer, self.actor.params(), cfg.actor_lr)
        self.critic1_opt = make_optimizer(cfg.optimizer, self.critic1.params(), cfg.critic_lr)
        self.critic2_opt = make_optimizer(cfg.optimizer, self.critic2.params(), cfg.critic_lr)
        self.update_count = 0
        self.env_steps = 0

    # -- inference ---------------------------------------------------------

    def act(self, state, explore=False, rng=None):
        """Deterministic mu(s); adds clipped Gaussian noise when exploring."""
        s = np.atleast_2d(np.asarray(state, dtype=float))
        a, _ = self.actor.forward(s)
        a = a[0]
        if explore:
            if rng is None:
                raise ValueError("explore=True requires an rng")
            frac = min(1.0, self.env_steps / max(1, self.cfg.exploration_decay_steps))
            sigma = (self.cfg.exploration_sigma
                     + frac * (self.cfg.exploration_sigma_final
                               - self.cfg.exploration_sigma))
            noise = rng.normal(0.0, sigma * (self.action_high - self.action_low))
            a = a + noise
        return np.clip(a, self.action_low, self.action_high)

    # -- standard twin-delayed updates --------------------------------------

    def td3_target(self, batch, rng=None):
        """y = r + gamma (1-d) min_i Q_i_target(s', pi_target(s') + noise)."""
        cfg = self.cfg
        s_next = batch["next_state"]
        a_next, _ = self.actor_target.forward(s_next)
        if cfg.target_noise_sigma > 0 and rng is not None:
            noise = np.clip(
                rng.normal(0.0, cfg.target_noise_sigma, size=a_next.shape),
                -cfg.target_noise_clip, cfg.target_noise_clip,
            )
            a_next = np.clip(a_next + noise, self.action_low, self.action_high)
        q1, _ = self.critic1_target.forward(s_next, a_next)
        q2, _ = self.critic2_target.forward(s_next, a_next)
        q_min = np.minimum(q1, q2)
        return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q_min

    def critic_update(self, batch, rng=None, targets=None):
        """One gradient step of both critics toward the shared target.

        Returns the pre-step loss mean(0.5 [(Q1-y)^2 + (Q2-y)^2]).
        """
        y = self.td3_target(batch, rng) if targets is None else targets
        s, a = batch["state"], batch["action"]
        n = len(y)
        loss = 0.0
        for critic, opt in ((self.critic1, self.critic1_opt),
                            (self.critic2, self.critic2_opt)):
            q, cache = critic.forward(s, a)
            err = q - y
            loss += float(np.mean(0.5 * err ** 2))
            grads, _ = critic.backward(cache, err / n)
            opt.step(grads)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"critic loss {loss}")
        self.update_count += 1
        return loss

    def actor_update(self, batch):
        """Delayed policy ascent on Q1(s, pi(s)) plus soft target update.

        The loss is -mean Q1(s, pi(s)) plus the configured logit
        penalty.  Off-cycle calls (update counter not a multiple of
        policy_delay) are a no-op returning None.
        """
        if self.update_count % self.cfg.policy_delay != 0:
            return None
        s = batch["state"]
        n = s.shape[0]
        a, actor_cache = self.actor.forward(s)
        q, critic_cache = self.critic1.forward(s, a)
        lam = self.cfg.logit_penalty
        z = self.actor.logits(actor_cache)
        loss = -float(np.mean(q)) + lam * float(np.mean(z ** 2))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"actor loss {loss}")
        # d(-mean q)/dq = -1/n; chain through the critic's action input.
        _, d_actions = self.critic1.backward(critic_cache, np.full(n, -1.0 / n))
        d_logits = 2.0 * lam * z / z.size if lam else None
        grads = self.actor.backward(actor_cache, d_actions, d_logits)
        self.actor_opt.step(grads)
        self.soft_update_targets()
        return loss

    def soft_update_targets(self, tau=None):
        tau = self.cfg.tau if tau is None else tau
        self.actor_target.net.soft_update_from(self.actor.net, tau)
        self.critic1_target.net.soft_update_from(self.critic1.net, tau)
        self.critic2_target.net.soft_update_from(self.critic2.net, tau)

    # -- specialized (residual) updates --------------------------------------

    def srla_update(self, batch, spec: SpecializationSpec,
                    env_low=None, env_high=None):
        """Residual update on specialized states.

        The critics regress the value of the executed composite action
        (a_expert plus the explored residual, as stored) toward the
        stored within-segment return; varied behavior actions are what
        teach the critics how value changes with the action.  The actor
        then maximizes Q1 at the current policy's composite
        clip(a_expert + a_residual(s*)).  Returns (actor_loss,
        critic_loss); the actor step observes the same policy delay as
        the standard path (None when off-cycle).
        """
        states = batch["state"]
        spec.check_batch(states)
        if np.any(np.isnan(batch["ret"])):
            raise ValueError("specialized batch lacks stored returns")
        y = batch["ret"]
        n = states.shape[0]

        critic_loss = 0.0
        for critic, opt in ((self.critic1, self.critic1_opt),
                            (self.critic2, self.critic2_opt)):
            q, cache = critic.forward(states, batch["action"])
            err = q - y
            critic_loss += float(np.mean(0.5 * err ** 2))
            grads, _ = critic.backward(cache, err / n)
            opt.step(grads)
        if not np.isfinite(critic_loss):
            raise NonFiniteLoss(f"critic loss {critic_loss}")
        self.update_count += 1

        if self.update_count % self.cfg.policy_delay != 0:
            return None, critic_loss
        expert = spec.expert_batch(states)
        residual, actor_cache = self.actor.forward(states)
        composite = expert + residual
        if env_low is not None:
            inside = (composite >= env_low) & (composite <= env_high)
            composite = np.clip(composite, env_low, env_high)
        else:
            inside = np.ones_like(composite, dtype=bool)
        q, critic_cache = self.critic1.forward(states, composite)
        lam = self.cfg.logit_penalty
        z = self.actor.logits(actor_cache)
        actor_loss = -float(np.mean(q)) + lam * float(np.mean(z ** 2))
        if not np.isfinite(actor_loss):
            raise NonFiniteLoss(f"actor loss {actor_loss}")
        _, d_actions = self.critic1.backward(critic_cache, np.full(n, -1.0 / n))
        d_actions = d_actions * inside  # clip passes no gradient outside
        d_logits = 2.0 * lam * z / z.size if lam else None
        grads = self.actor.backward(actor_cache, d_actions, d_logits)
        self.actor_opt.step(grads)
        self.soft_update_targets()
        return actor_loss, critic_loss


# ---------------------------------------------------------------------------
# Multi-agent registry: one specialized agent per abnormality class
# ---------------------------------------------------------------------------

class AgentRegistry:
    """Holds independent agents keyed by abnormality id; one active at a time."""

    def __init__(self):
        self._agents = {}

    def register(self, abnormality_id: str, agent, spec=None, actuator=None,
                 y_source=None):
        """``y_source`` is (state field, setpoint, scale) for live inference."""
        self._agents[abnormality_id] = {
            "agent": agent, "spec": spec, "actuator": actuator,
            "y_source": y_source,
        }

    def __len__(self):
        return len(self._agents)

    def __contains__(self, abnormality_id):
        return abnormality_id in self._agents

    def ids(self):
        return tuple(self._agents.keys())

    def entry(self, abnormality_id: str) -> dict:
        if abnormality_id not in self._agents:
            raise NoAgentForAbnormality(f"no agent for {abnormality_id!r}")
        return self._agents[abnormality_id]


def select_agent(registry: AgentRegistry, abnormality_id: str):
    """The agent registered for this abnormality (same instance each call)."""
    return registry.entry(abnormality_id)["agent"]
