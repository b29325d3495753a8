"""The two DQN agents: epsilon-greedy per-feature action selection, FIFO
experience replay, and temporal-difference updates backpropagated through the
state encoder.

Both agents evaluate one shared Q-network per feature token, so the parameter
count is independent of the feature count.  The bootstrap term of the TD
target is treated as a constant (no target network by default; a periodically
synced copy is available via ``target_sync_every``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import transforms
from .embedding import EncodingConfig, StateEncoder
from .errors import NoPartnerError
from .nnkernel import (Adam, Array, Linear, MLP, _prefixed, accumulate,
                       load_params, save_params, zero_grads)

REPLAY_CAPACITY = 24
BATCH_SIZE = 8
OP_EMBED_DIM = 8
DISCRIM_ACTIONS = ("delete", "replace", "add")
LEARNING_RATE = 1e-4


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exponential decay from ``start`` to ``end``, reaching ``end`` at
    ``decay_fraction`` of the total epochs."""

    start: float = 0.9
    end: float = 0.1
    decay_fraction: float = 0.8

    def value(self, epoch: int, total_epochs: int) -> float:
        horizon = self.decay_fraction * total_epochs
        if horizon <= 0:
            return self.end
        t = min(1.0, epoch / horizon)
        return max(self.end, self.start * (self.end / self.start) ** t)


@dataclass(frozen=True)
class StateView:
    """Encoder input for one transition: the full standardized descriptor
    matrix (attention needs all rows) plus the focal feature's row."""

    desc: Array
    kinds: Array
    row: int


@dataclass(frozen=True)
class Transition:
    state: StateView
    action: int
    reward: float
    next_state: StateView
    terminal: bool
    op: int = -1       # discrimination agent: operator chosen for the feature
    next_op: int = -1  # operator at the next step (unused when terminal)


@dataclass(frozen=True)
class OpChoice:
    """One entry of an operator sequence; partner is set for binary/cross ops."""

    op: str
    partner: int | None = None


class ReplayBuffer:
    """Fixed-capacity FIFO ring; sampling is uniform without replacement."""

    def __init__(self, capacity: int = REPLAY_CAPACITY):
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    @property
    def items(self) -> list:
        return list(self._items)

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator) -> list:
        if not self._items:
            raise ValueError("sampling from empty buffer")
        if batch > len(self._items):
            raise ValueError(f"batch {batch} exceeds buffer size {len(self._items)}")
        idx = rng.choice(len(self._items), size=batch, replace=False)
        return [self._items[i] for i in idx]


def td_target(reward: float, terminal: bool, q_next_max: float, gamma: float) -> float:
    return reward if terminal else reward + gamma * q_next_max


def _op_index(op: str) -> int:
    return transforms.ALL_OPS.index(op)


class _EncoderQAgent:
    """Shared machinery: encoder + ReLU trunk + output head(s) + Adam + replay."""

    def __init__(self, rng: np.random.Generator, cfg: EncodingConfig,
                 head_sizes: dict[str, int], extra_in: int = 0,
                 attention: bool = True, lr: float = LEARNING_RATE,
                 target_sync_every: int = 0):
        self.cfg = cfg
        self.encoder = StateEncoder(rng, cfg, attention=attention)
        self.trunk = Linear(rng, cfg.d_model + extra_in, cfg.hidden)
        self.heads = {name: Linear(rng, cfg.hidden, size)
                      for name, size in head_sizes.items()}
        self.replay = ReplayBuffer(REPLAY_CAPACITY)
        self.adam = Adam(self.parameters(), lr=lr)
        self.target_sync_every = target_sync_every
        self._updates = 0
        self._target = None
        if target_sync_every > 0:
            self._target = copy.deepcopy(self)

    def parameters(self) -> dict[str, Array]:
        out = {**_prefixed("enc.", self.encoder.parameters()),
               **_prefixed("trunk.", self.trunk.parameters())}
        for name, head in self.heads.items():
            out.update(_prefixed(f"head_{name}.", head.parameters()))
        return out

    def save(self, path) -> None:
        save_params(path, self.parameters())

    def load(self, path) -> None:
        stored = load_params(path)
        params = self.parameters()
        if set(stored) != set(params):
            raise ValueError("checkpoint parameter names do not match this agent")
        for key, arr in stored.items():
            if params[key].shape != arr.shape:
                raise ValueError(f"checkpoint shape mismatch for {key}")
            params[key][...] = arr

    # forward helpers -----------------------------------------------------

    def _q_from_input(self, x: Array, head: str):
        h, ct = self.trunk.forward(x[None, :])
        a = np.maximum(h, 0.0)
        q, ch = self.heads[head].forward(a)
        return q[0], (ct, h, ch)

    def _q_backward(self, cache, head: str, dq: Array):
        ct, h, ch = cache
        da, gh = self.heads[head].backward(ch, dq[None, :])
        dh = da * (h > 0)
        dx, gt = self.trunk.backward(ct, dh)
        grads = {**_prefixed("trunk.", gt), **_prefixed(f"head_{head}.", gh)}
        return dx[0], grads

    def _bootstrap_net(self) -> "_EncoderQAgent":
        return self._target if self._target is not None else self

    def _after_update(self) -> None:
        self._updates += 1
        if self._target is not None and self._updates % self.target_sync_every == 0:
            own = self.parameters()
            for key, arr in self._target.parameters().items():
                arr[...] = own[key]


class GenerationAgent(_EncoderQAgent):
    """Proposes one transformation per feature (continuous and discrete ops
    come from separate output heads over a shared trunk)."""

    def __init__(self, rng: np.random.Generator, cfg: EncodingConfig,
                 attention: bool = True, lr: float = LEARNING_RATE,
                 target_sync_every: int = 0):
        super().__init__(rng, cfg,
                         head_sizes={"cont": len(transforms.CONTINUOUS_OPS),
                                     "disc": len(transforms.DISCRETE_OPS)},
                         attention=attention, lr=lr,
                         target_sync_every=target_sync_every)

    @staticmethod
    def _head_for(kind: float) -> tuple[str, tuple[str, ...]]:
        if kind < 0:
            return "disc", transforms.DISCRETE_OPS
        return "cont", transforms.CONTINUOUS_OPS

    def q_values(self, desc: Array, kinds: Array, row: int) -> Array:
        tokens, _ = self.encoder.forward(desc, kinds)
        head, _ops = self._head_for(kinds[row])
        q, _ = self._q_from_input(tokens[row], head)
        return q

    def act(self, desc: Array, kinds: Array, features, epsilon: float,
            rng: np.random.Generator) -> list[OpChoice]:
        """Epsilon-greedy operator per feature; binary/cross actions receive a
        partner, degrading to the identity action when none exists."""
        tokens, _ = self.encoder.forward(desc, kinds)
        choices = []
        for i in range(len(features)):
            head, ops = self._head_for(kinds[i])
            if rng.random() < epsilon:
                a = int(rng.integers(len(ops)))
            else:
                q, _ = self._q_from_input(tokens[i], head)
                a = int(np.argmax(q))
            op = ops[a]
            partner = None
            if op in transforms.BINARY_OPS:
                try:
                    partner = transforms.select_partner(features, i, needed_discrete=False)
                except NoPartnerError:
                    op, partner = "none", None
            elif op == "cross":
                try:
                    partner = transforms.select_partner(features, i, needed_discrete=True)
                except NoPartnerError:
                    op, partner = "addd", None
            choices.append(OpChoice(op, partner))
        return choices

    def action_index(self, kind: float, op: str) -> int:
        _, ops = self._head_for(kind)
        return ops.index(op)

    def update(self, batch: list[Transition], gamma: float) -> float:
        """One Adam step on the mean squared TD error of *batch*."""
        grads = zero_grads(self.parameters())
        fwd: dict[int, tuple] = {}
        dtok: dict[int, Array] = {}
        for t in batch:
            key = id(t.state.desc)
            if key not in fwd:
                tokens, cache = self.encoder.forward(t.state.desc, t.state.kinds)
                fwd[key] = (tokens, cache, t.state)
                dtok[key] = np.zeros_like(tokens)
        boot = self._bootstrap_net()
        loss = 0.0
        for t in batch:
            tokens, _, _ = fwd[id(t.state.desc)]
            head, _ = self._head_for(t.state.kinds[t.state.row])
            q, qcache = self._q_from_input(tokens[t.state.row], head)
            if t.terminal:
                target = t.reward
            else:
                ntokens, _ = boot.encoder.forward(t.next_state.desc, t.next_state.kinds)
                nhead, _ = self._head_for(t.next_state.kinds[t.next_state.row])
                nq, _ = boot._q_from_input(ntokens[t.next_state.row], nhead)
                target = td_target(t.reward, False, float(np.max(nq)), gamma)
            err = q[t.action] - target
            loss += err * err
            dq = np.zeros_like(q)
            dq[t.action] = 2.0 * err / len(batch)
            dtoken, g = self._q_backward(qcache, head, dq)
            accumulate(grads, g)
            dtok[id(t.state.desc)][t.state.row] += dtoken
        for key, (tokens, cache, _) in fwd.items():
            accumulate(grads, self.encoder.backward(cache, dtok[key]), prefix="enc.")
        self.adam.step(grads)
        self._after_update()
        return loss / len(batch)


class DiscriminationAgent(_EncoderQAgent):
    """Decides delete/replace/add per generated feature; its input is the
    feature token concatenated with a learned embedding of the chosen operator."""

    def __init__(self, rng: np.random.Generator, cfg: EncodingConfig,
                 attention: bool = True, lr: float = LEARNING_RATE,
                 target_sync_every: int = 0):
        self.op_table = np.stack([
            np.sqrt(6.0 / (len(transforms.ALL_OPS) + OP_EMBED_DIM))
            * (2.0 * rng.random(OP_EMBED_DIM) - 1.0)
            for _ in transforms.ALL_OPS])
        super().__init__(rng, cfg, head_sizes={"q": len(DISCRIM_ACTIONS)},
                         extra_in=OP_EMBED_DIM, attention=attention, lr=lr,
                         target_sync_every=target_sync_every)

    def parameters(self) -> dict[str, Array]:
        out = super().parameters()
        out["op_table"] = self.op_table
        return out

    def q_values(self, desc: Array, kinds: Array, row: int, op: str) -> Array:
        tokens, _ = self.encoder.forward(desc, kinds)
        x = np.concatenate([tokens[row], self.op_table[_op_index(op)]])
        q, _ = self._q_from_input(x, "q")
        return q

    def act(self, desc: Array, kinds: Array, t1: list[OpChoice], epsilon: float,
            rng: np.random.Generator) -> list[int]:
        tokens, _ = self.encoder.forward(desc, kinds)
        actions = []
        for i, choice in enumerate(t1):
            if rng.random() < epsilon:
                actions.append(int(rng.integers(len(DISCRIM_ACTIONS))))
            else:
                x = np.concatenate([tokens[i], self.op_table[_op_index(choice.op)]])
                q, _ = self._q_from_input(x, "q")
                actions.append(int(np.argmax(q)))
        return actions

    def update(self, batch: list[Transition], gamma: float) -> float:
        grads = zero_grads(self.parameters())
        fwd: dict[int, tuple] = {}
        dtok: dict[int, Array] = {}
        for t in batch:
            key = id(t.state.desc)
            if key not in fwd:
                tokens, cache = self.encoder.forward(t.state.desc, t.state.kinds)
                fwd[key] = (tokens, cache)
                dtok[key] = np.zeros_like(tokens)
        boot = self._bootstrap_net()
        loss = 0.0
        d = self.cfg.d_model
        for t in batch:
            tokens, _ = fwd[id(t.state.desc)]
            x = np.concatenate([tokens[t.state.row], self.op_table[t.op]])
            q, qcache = self._q_from_input(x, "q")
            if t.terminal:
                target = t.reward
            else:
                ntokens, _ = boot.encoder.forward(t.next_state.desc, t.next_state.kinds)
                nx = np.concatenate([ntokens[t.next_state.row],
                                     boot.op_table[t.next_op]])
                nq, _ = boot._q_from_input(nx, "q")
                target = td_target(t.reward, False, float(np.max(nq)), gamma)
            err = q[t.action] - target
            loss += err * err
            dq = np.zeros_like(q)
            dq[t.action] = 2.0 * err / len(batch)
            dx, g = self._q_backward(qcache, "q", dq)
            accumulate(grads, g)
            dtok[id(t.state.desc)][t.state.row] += dx[:d]
            grads["op_table"][t.op] += dx[d:]
        for key, (tokens, cache) in fwd.items():
            accumulate(grads, self.encoder.backward(cache, dtok[key]), prefix="enc.")
        self.adam.step(grads)
        self._after_update()
        return loss / len(batch)


class QNetAgent:
    """Plain DQN over raw state vectors (no encoder); the same TD machinery
    on a generic MDP."""

    def __init__(self, rng: np.random.Generator, dims: tuple[int, ...],
                 lr: float = 1e-2):
        self.net = MLP(rng, dims)
        self.adam = Adam(self.net.parameters(), lr=lr)
        self.replay = ReplayBuffer(REPLAY_CAPACITY)

    def q_values(self, state: Array) -> Array:
        q, _ = self.net.forward(state)
        return q

    def act(self, state: Array, epsilon: float, rng: np.random.Generator) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(self.net.layers[-1].b.shape[0]))
        return int(np.argmax(self.q_values(state)))

    def update(self, batch: list[tuple], gamma: float) -> float:
        """Batch items are (state, action, reward, next_state, terminal)."""
        grads = zero_grads(self.net.parameters())
        loss = 0.0
        for s, a, r, s2, terminal in batch:
            q, cache = self.net.forward(s)
            q_next = 0.0 if terminal else float(np.max(self.q_values(s2)))
            target = td_target(r, terminal, q_next, gamma)
            err = q[a] - target
            loss += err * err
            dq = np.zeros_like(q)
            dq[a] = 2.0 * err / len(batch)
            _, g = self.net.backward(cache, dq)
            accumulate(grads, g)
        self.adam.step(grads)
        return loss / len(batch)
