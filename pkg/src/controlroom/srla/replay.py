"""Bounded replay buffer with seed-reproducible sampling."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Ring buffer of (s, a, r, s', done) transitions.

    An optional per-transition scalar return is stored alongside for the
    specialized (Monte-Carlo target) update path.
    """

    def __init__(self, capacity, state_dim, action_dim):
        self.capacity = int(capacity)
        self.state = np.zeros((self.capacity, state_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.next_state = np.zeros((self.capacity, state_dim))
        self.done = np.zeros(self.capacity)
        self.ret = np.full(self.capacity, np.nan)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, s, a, r, s_next, done, ret=np.nan):
        i = self._next
        self.state[i] = s
        self.action[i] = a
        self.reward[i] = r
        self.next_state[i] = s_next
        self.done[i] = float(done)
        self.ret[i] = ret
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "state": self.state[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "next_state": self.next_state[idx],
            "done": self.done[idx],
            "ret": self.ret[idx],
        }
