"""Benchmark simulators, behaviour policies, dataset generation and ground truth.

Each environment describes its dynamics through two small functions over a
hashable hidden state: :meth:`Environment.reset_outcomes` and
:meth:`Environment.outcomes`.  From these a table of every reachable hidden
state is built once, which serves three purposes: vectorised episode
sampling, construction of an exact layered RDP from beliefs, and exact
optimal returns by expectimax over beliefs.

Conventions shared by all domains:

* step 0 carries the start action, the reset observation and reward 0;
* step ``H`` is a dead step: whatever the action, the observation is the
  terminal symbol and the reward is 0;
* an episode that terminates early keeps emitting the terminal symbol with
  reward 0 until step ``H``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .exceptions import UnsupportedEnvironmentError, UsageError
from .trace import AlphabetSpec, Dataset

DONE = ("__done__",)
END = "end"
_ROUND = 12


class Environment:
    """Base class; subclasses set ``name`` and implement the two outcome hooks."""

    name = "env"
    actions: tuple = ()
    rewards: tuple = ()

    def __init__(self, horizon: int):
        if int(horizon) < 1:
            raise UsageError("horizon must be >= 1")
        self.horizon = int(horizon)

    # -- hooks ----------------------------------------------------------------------
    def observations(self) -> tuple:
        raise NotImplementedError

    def reset_outcomes(self) -> list:
        """``[(prob, hidden, obs_symbol), ...]``."""
        raise NotImplementedError

    def step_outcomes(self, hidden, action) -> list:
        """``[(prob, next_hidden, obs_symbol, reward), ...]`` for a live hidden state."""
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {"horizon": self.horizon}

    # -- derived ------------------------------------------------------------------
    def outcomes(self, hidden, action) -> list:
        if hidden == DONE:
            return [(1.0, DONE, END, 0)]
        return self.step_outcomes(hidden, action)

    @property
    def alphabet(self) -> AlphabetSpec:
        try:
            return self._alphabet
        except AttributeError:
            self._alphabet = AlphabetSpec(
                actions=self.actions,
                obs_features=(tuple(self.observations()) + (END,),),
                rewards=self.rewards,
                horizon=self.horizon,
                terminal_obs=(END,),
            )
            return self._alphabet

    @property
    def table(self) -> "EnvTable":
        try:
            return self._table
        except AttributeError:
            self._table = EnvTable.build(self)
            return self._table

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


@dataclass
class EnvTable:
    """Dense outcome table over the reachable hidden states of an environment.

    ``cum[s, a]`` holds cumulative outcome probabilities padded with 1.0, and
    ``nxt``, ``obs``, ``rew`` the outcome's next hidden index, observation
    code and reward code.  Row ``done`` is the absorbing terminated state.
    """

    states: list
    index: dict
    reset_cum: np.ndarray
    reset_next: np.ndarray
    reset_obs: np.ndarray
    prob: np.ndarray
    cum: np.ndarray
    nxt: np.ndarray
    obs: np.ndarray
    rew: np.ndarray
    done: int

    @classmethod
    def build(cls, env: Environment) -> "EnvTable":
        a = env.alphabet
        obs_code = {s: i for i, s in enumerate(a.obs_features[0])}
        rew_code = {r: i for i, r in enumerate(a.rewards)}
        states, index = [], {}

        def intern(h):
            if h not in index:
                index[h] = len(states)
                states.append(h)
            return index[h]

        intern(DONE)
        reset = env.reset_outcomes()
        r_next = np.array([intern(h) for _, h, _ in reset])
        r_obs = np.array([obs_code[o] for _, _, o in reset])
        r_prob = np.array([p for p, _, _ in reset], dtype=float)
        rows = {}
        k = 0
        while k < len(states):
            h = states[k]
            for ai, act in enumerate(a.actions):
                outs = env.outcomes(h, act)
                rows[k, ai] = [(p, intern(nh), obs_code[o], rew_code[r]) for p, nh, o, r in outs]
            k += 1
        S, A = len(states), a.n_actions
        K = max(len(v) for v in rows.values())
        prob = np.zeros((S, A, K))
        nxt = np.zeros((S, A, K), dtype=np.int64)
        obs = np.zeros((S, A, K), dtype=np.int64)
        rew = np.zeros((S, A, K), dtype=np.int64)
        for (s, ai), outs in rows.items():
            for j, (p, nh, o, r) in enumerate(outs):
                prob[s, ai, j], nxt[s, ai, j], obs[s, ai, j], rew[s, ai, j] = p, nh, o, r
        if not np.allclose(prob.sum(-1), 1.0) or not math.isclose(r_prob.sum(), 1.0):
            raise UsageError(f"{env.name}: outcome probabilities do not sum to 1")
        return cls(states, index, _cumulative(r_prob), r_next, r_obs, prob, _cumulative(prob), nxt, obs, rew, 0)


def _cumulative(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    # padded entries must never be selected
    last = (p > 0)[..., ::-1].argmax(-1)
    last = p.shape[-1] - 1 - last
    idx = np.arange(p.shape[-1])
    c = np.where(idx >= last[..., None], 1.0, c)
    return c


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u[:, None] >= cum).sum(axis=1)


# -- domains -----------------------------------------------------------------------


class Corridor(Environment):
    """Two-row corridor with an enemy whose row pattern flips on every encounter.

    The agent advances one column per step and picks the row with the action.
    ``p_top[i]`` / ``p_bottom[i]`` are the enemy probabilities in column
    ``i + 1``; the two vectors swap each time the agent meets the enemy.  The
    starting orientation is random and shown by the reset observation.  Reward
    +1 for clearing the last column, after which the agent restarts at column 1.
    """

    name = "corridor"
    actions = ("a0", "a1")
    rewards = (0, 1)

    def __init__(self, horizon: int = 5, length: Optional[int] = None, p_top=None, p_bottom=None):
        super().__init__(horizon)
        self.length = int(length) if length is not None else max(1, self.horizon - 1)
        if self.length < 1:
            raise UsageError("corridor length must be >= 1")
        if p_top is None:
            p_top = [1.0 if i % 2 == 0 else 0.0 for i in range(self.length)]
        if p_bottom is None:
            p_bottom = [1.0 - p for p in p_top]
        self.p = (tuple(float(x) for x in p_top), tuple(float(x) for x in p_bottom))
        if any(len(v) != self.length for v in self.p) or any(not 0 <= x <= 1 for v in self.p for x in v):
            raise UsageError("enemy probability vectors must have one entry in [0, 1] per column")

    @property
    def params(self):
        return {"horizon": self.horizon, "length": self.length, "p_top": list(self.p[0]), "p_bottom": list(self.p[1])}

    def observations(self):
        cells = [f"c{c}r{j}{e}" for c in range(1, self.length + 1) for j in (0, 1) for e in "ec"]
        return ("s0", "s1", *cells)

    def reset_outcomes(self):
        return [(0.5, (0, 0, 0), "s0"), (0.5, (0, 0, 1), "s1")]

    def step_outcomes(self, hidden, action):
        col, _, flip = hidden
        row = self.actions.index(action)
        nc = col + 1 if col < self.length else 1
        pe = self.p[row ^ flip][nc - 1]
        out = []
        for enemy, p in ((True, pe), (False, 1.0 - pe)):
            if p <= 0:
                continue
            reward = 1 if (nc == self.length and not enemy) else 0
            obs = f"c{nc}r{row}{'e' if enemy else 'c'}"
            out.append((p, (nc, row, flip ^ int(enemy)), obs, reward))
        return out


class TMaze(Environment):
    """Start cell S, ``length - 1`` corridor cells, then a T-junction.

    The start observation (``110`` or ``011``) tells where the goal is.  Turning
    at the junction ends the episode with +4 when correct and -1 otherwise;
    any move that leaves the agent in place costs -1.
    """

    name = "tmaze"
    actions = ("N", "S", "E", "W")
    rewards = (0, -1, 4)
    SIGNAL = {"N": "110", "S": "011"}

    def __init__(self, horizon: int = 5, length: int = 1):
        super().__init__(horizon)
        self.length = int(length)
        if self.length < 1:
            raise UsageError("T-maze corridor length must be >= 1")

    @property
    def params(self):
        return {"horizon": self.horizon, "length": self.length}

    def observations(self):
        return ("110", "011", "101", "010")

    def _obs(self, x, goal):
        if x == 0:
            return self.SIGNAL[goal]
        return "010" if x == self.length else "101"

    def reset_outcomes(self):
        return [(0.5, (0, g), self.SIGNAL[g]) for g in ("N", "S")]

    def step_outcomes(self, hidden, action):
        x, goal = hidden
        if x == self.length and action in ("N", "S"):
            return [(1.0, DONE, END, 4 if action == goal else -1)]
        nx = x + 1 if action == "E" else x - 1 if action == "W" else x
        if nx < 0 or nx > self.length or nx == x:
            return [(1.0, hidden, self._obs(x, goal), -1)]
        return [(1.0, (nx, goal), self._obs(nx, goal), 0)]


class Cookie(Environment):
    """Four rooms around a white hub; pressing the button in red drops a cookie."""

    name = "cookie"
    actions = ("left", "right", "up", "down", "press", "eat")
    rewards = (0, 1)
    MOVES = {
        ("white", "left"): "blue",
        ("white", "right"): "green",
        ("white", "up"): "red",
        ("blue", "right"): "white",
        ("green", "left"): "white",
        ("red", "down"): "white",
    }

    def __init__(self, horizon: int = 9):
        super().__init__(horizon)

    def observations(self):
        return ("white", "blue", "green", "red", "blue+cookie", "green+cookie")

    @staticmethod
    def _obs(room, cookie):
        return f"{room}+cookie" if cookie == room else room

    def reset_outcomes(self):
        return [(1.0, ("white", None), "white")]

    def step_outcomes(self, hidden, action):
        room, cookie = hidden
        if action == "press" and room == "red" and cookie is None:
            return [(0.5, ("red", c), "red", 0) for c in ("blue", "green")]
        if action == "eat" and cookie == room:
            return [(1.0, (room, None), room, 1)]
        nroom = self.MOVES.get((room, action), room)
        return [(1.0, (nroom, cookie), self._obs(nroom, cookie), 0)]


class Cheese(Environment):
    """McCallum's cheese maze: five top cells and three two-cell shafts.

    Cells 0-4 form the top row, cells 5/6/7 sit below columns 0/2/4 and
    cells 8/9/10 below those.  Cell 9 holds the cheese.  Observations are
    wall patterns, so several cells look alike.  Reaching the cheese pays +1
    and teleports the agent to a uniformly random non-goal cell.
    """

    name = "cheese"
    actions = ("N", "E", "S", "W")
    rewards = (0, 1)
    GOAL = 9
    WALLS = {0: "NW", 1: "NS", 2: "N", 3: "NS", 4: "NE", 5: "EW", 6: "EW", 7: "EW", 8: "EWS", 9: "EWS", 10: "EWS"}
    ADJ = {
        (0, "E"): 1, (1, "W"): 0, (1, "E"): 2, (2, "W"): 1, (2, "E"): 3, (3, "W"): 2, (3, "E"): 4, (4, "W"): 3,
        (0, "S"): 5, (5, "N"): 0, (5, "S"): 8, (8, "N"): 5,
        (2, "S"): 6, (6, "N"): 2, (6, "S"): 9, (9, "N"): 6,
        (4, "S"): 7, (7, "N"): 4, (7, "S"): 10, (10, "N"): 7,
    }

    def __init__(self, horizon: int = 6):
        super().__init__(horizon)
        self.starts = [c for c in range(11) if c != self.GOAL]

    def observations(self):
        return ("NW", "NS", "N", "NE", "EW", "EWS")

    def _respawn(self, reward):
        p = 1.0 / len(self.starts)
        return [(p, c, self.WALLS[c], reward) for c in self.starts]

    def reset_outcomes(self):
        return [(p, c, o) for p, c, o, _ in self._respawn(0)]

    def step_outcomes(self, hidden, action):
        nxt = self.ADJ.get((hidden, action), hidden)
        if nxt == self.GOAL:
            return self._respawn(1)
        return [(1.0, nxt, self.WALLS[nxt], 0)]


class MiniHall(Environment):
    """Three rooms in a row (A, B, C), four headings each, twelve hidden states.

    Observations describe what lies ahead and map the twelve states onto six
    symbols.  Walking forward into the star on the north wall of room C pays
    +1 and resets the agent uniformly over the other states.
    """

    name = "minihall"
    actions = ("forward", "left", "right")
    rewards = (0, 1)
    HEADINGS = ("N", "E", "S", "W")
    ROOMS = ("A", "B", "C")
    GOAL = ("C", "N")
    VIEW = {
        ("A", "N"): "window", ("A", "E"): "door", ("A", "S"): "wall", ("A", "W"): "corner",
        ("B", "N"): "wall", ("B", "E"): "door", ("B", "S"): "wall", ("B", "W"): "door",
        ("C", "N"): "star", ("C", "E"): "corner", ("C", "S"): "plant", ("C", "W"): "door",
    }

    def __init__(self, horizon: int = 15):
        super().__init__(horizon)
        self.starts = [(r, h) for r in self.ROOMS for h in self.HEADINGS if (r, h) != self.GOAL]

    def observations(self):
        return ("window", "door", "wall", "corner", "star", "plant")

    def reset_outcomes(self):
        p = 1.0 / len(self.starts)
        return [(p, s, self.VIEW[s]) for s in self.starts]

    def step_outcomes(self, hidden, action):
        room, head = hidden
        if action == "forward":
            if hidden == self.GOAL:
                p = 1.0 / len(self.starts)
                return [(p, s, self.VIEW[s], 1) for s in self.starts]
            r = self.ROOMS.index(room)
            if head == "E" and r < 2:
                room = self.ROOMS[r + 1]
            elif head == "W" and r > 0:
                room = self.ROOMS[r - 1]
        else:
            turn = 1 if action == "right" else -1
            head = self.HEADINGS[(self.HEADINGS.index(head) + turn) % 4]
        return [(1.0, (room, head), self.VIEW[(room, head)], 0)]


ENVIRONMENTS = {
    "corridor": Corridor,
    "tmaze": TMaze,
    "cookie": Cookie,
    "cheese": Cheese,
    "minihall": MiniHall,
}


def make_env(name: str, **params) -> Environment:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise UsageError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    params = {k: v for k, v in params.items() if v is not None}
    try:
        env = cls(**params)
    except TypeError as exc:
        raise UsageError(f"bad parameters for {name}: {exc}") from None
    if not _reward_reachable(env):
        warnings.warn(f"{name}: no positive reward is reachable within horizon {env.horizon}", stacklevel=2)
    return env


def _reward_reachable(env: Environment) -> bool:
    tab = env.table
    frontier = set(tab.reset_next.tolist())
    for _ in range(1, env.horizon):
        rewards = np.asarray(env.alphabet.rewards)[tab.rew[list(frontier)]]
        live = tab.prob[list(frontier)] > 0
        if np.any((rewards > 0) & live):
            return True
        frontier = set(tab.nxt[list(frontier)][live].tolist())
    return False


# -- policies and generation --------------------------------------------------------


@dataclass(frozen=True)
class BehaviorPolicy:
    """A state-independent action distribution (trivially regular)."""

    name: str
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or not math.isclose(p.sum(), 1.0):
            raise UsageError("policy probabilities must be non-negative and sum to 1")

    def action_probs(self, state=None) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(len(self.probs), size=n, p=self.action_probs())


def uniform_policy(env_or_alphabet) -> BehaviorPolicy:
    a = getattr(env_or_alphabet, "alphabet", env_or_alphabet)
    return BehaviorPolicy("uniform", tuple([1.0 / a.n_actions] * a.n_actions))


def _obs_codes(alphabet: AlphabetSpec) -> np.ndarray:
    """Per-feature codes of every observation index, shape ``(n_obs, m)``."""
    sizes = [len(d) for d in alphabet.obs_features]
    return np.stack(np.unravel_index(np.arange(alphabet.n_obs), sizes), axis=-1)


def generate_dataset(env: Environment, policy: BehaviorPolicy, n_episodes: int, seed: int = 0) -> Dataset:
    """``n_episodes`` i.i.d. episodes; a pure function of its arguments."""
    if int(n_episodes) < 1:
        raise UsageError("n_episodes must be >= 1")
    a, tab = env.alphabet, env.table
    if len(policy.probs) != a.n_actions:
        raise UsageError("policy does not match the environment's action set")
    N, H = int(n_episodes), env.horizon
    rng = np.random.default_rng(seed)
    codes = np.zeros((N, H + 1, 3), dtype=np.int32)
    zero = a.rewards.index(0)
    j = _pick(np.broadcast_to(tab.reset_cum, (N, tab.reset_cum.size)), rng.random(N))
    hidden = tab.reset_next[j]
    codes[:, 0] = np.stack([np.full(N, a.start_index), tab.reset_obs[j], np.full(N, zero)], axis=1)
    for t in range(1, H + 1):
        act = policy.sample(rng, N)
        u = rng.random(N)
        if t == H:
            codes[:, t] = np.stack([act, np.full(N, a.terminal_index), np.full(N, zero)], axis=1)
            break
        k = _pick(tab.cum[hidden, act], u)
        codes[:, t] = np.stack([act, tab.obs[hidden, act, k], tab.rew[hidden, act, k]], axis=1)
        hidden = tab.nxt[hidden, act, k]
    meta = {"generator": env.name, "params": env.params, "policy": policy.name, "seed": seed}
    return Dataset(a, codes, meta)


# -- ground truth ---------------------------------------------------------------------


@dataclass
class GroundTruthRdp:
    """Exact layered RDP.

    Arrays are indexed by state id and action code (the start action is code
    ``A``).  ``tau[q, a, o] == -1`` marks a transition with zero probability.
    ``labels`` keeps a human-readable description of each state.
    """

    alphabet: AlphabetSpec
    layer_of: np.ndarray
    theta_o: np.ndarray
    theta_r: np.ndarray
    tau: np.ndarray
    labels: list = field(default_factory=list)

    initial = 0

    @property
    def n_states(self) -> int:
        return int(self.layer_of.size)

    @property
    def layers(self) -> list:
        H = self.alphabet.horizon
        return [np.flatnonzero(self.layer_of == t).tolist() for t in range(H + 2)]

    def actions_at(self, q: int) -> list:
        return [self.alphabet.start_index] if q == self.initial else list(range(self.alphabet.n_actions))

    def map_history(self, codes: np.ndarray) -> int:
        q = self.initial
        for step in np.asarray(codes):
            o = int(self.alphabet.obs_index(step[1:-1]))
            q = int(self.tau[q, int(step[0]), o])
            if q < 0:
                return -1
        return q

    def sample(self, policy: BehaviorPolicy, n_episodes: int, seed: int = 0, name: str = "rdp") -> Dataset:
        a = self.alphabet
        N, H = int(n_episodes), a.horizon
        rng = np.random.default_rng(seed)
        cum_o = np.cumsum(self.theta_o, -1)
        cum_r = np.cumsum(self.theta_r, -1)
        cum_o[..., -1] = np.where(self.theta_o.sum(-1) > 0, 1.0, cum_o[..., -1])
        cum_r[..., -1] = np.where(self.theta_r.sum(-1) > 0, 1.0, cum_r[..., -1])
        feats = _obs_codes(a)
        codes = np.zeros((N, H + 1, a.n_slots), dtype=np.int32)
        q = np.zeros(N, dtype=np.int64)
        for t in range(H + 1):
            act = np.full(N, a.start_index) if t == 0 else policy.sample(rng, N)
            o = _pick(cum_o[q, act], rng.random(N))
            r = _pick(cum_r[q, act], rng.random(N))
            codes[:, t, 0] = act
            codes[:, t, 1:-1] = feats[o]
            codes[:, t, -1] = r
            q = self.tau[q, act, o]
        return Dataset(a, codes, {"generator": name, "policy": policy.name, "seed": seed})


def _belief_key(b: dict) -> tuple:
    return tuple(sorted((h, round(p, _ROUND)) for h, p in b.items() if p > 0))


def _normalise(b: dict) -> dict:
    z = sum(b.values())
    return {h: p / z for h, p in b.items()}


def _branch(env: Environment, belief: dict, action) -> dict:
    """``{(obs, reward): (prob, next_belief)}`` for one action from a belief."""
    joint: dict = {}
    for h, ph in belief.items():
        for p, nh, o, r in env.outcomes(h, action):
            if p * ph <= 0:
                continue
            slot = joint.setdefault((o, r), {})
            slot[nh] = slot.get(nh, 0.0) + p * ph
    return {k: (sum(v.values()), _normalise(v)) for k, v in joint.items()}


def ground_truth_rdp(env: Environment) -> GroundTruthRdp:
    """Exact minimal layered RDP of ``env`` built from history beliefs.

    Raises :class:`UnsupportedEnvironmentError` when the observation and
    reward of a step are not conditionally independent given the belief and
    action, or when the reward carries information beyond the observation;
    such domains have no exact RDP over action-observation transitions.
    """
    a = env.alphabet
    H, A, O, R = a.horizon, a.n_actions, a.n_obs, a.n_rewards
    obs_i = {s: i for i, s in enumerate(a.obs_features[0])}
    rew_i = {r: i for i, r in enumerate(a.rewards)}
    labels, layer_of = ["initial"], [0]
    th_o, th_r, tau = {}, {}, {}
    # layer 1 from the reset distribution
    reset: dict = {}
    for p, h, o in env.reset_outcomes():
        reset.setdefault(o, {})
        reset[o][h] = reset[o].get(h, 0.0) + p
    layer: dict = {}
    th_o[0, A] = np.zeros(O)
    th_r[0, A] = np.zeros(R)
    th_r[0, A][a.rewards.index(0)] = 1.0
    for o, bh in reset.items():
        th_o[0, A][obs_i[o]] = sum(bh.values())
        b = _normalise(bh)
        key = _belief_key(b)
        if key not in layer:
            layer[key] = len(labels)
            labels.append(b)
            layer_of.append(1)
        tau[0, A, obs_i[o]] = layer[key]
    for t in range(1, H):
        nxt_layer: dict = {}
        for key, q in layer.items():
            belief = labels[q]
            for ai, act in enumerate(a.actions):
                br = _branch(env, belief, act)
                po, pr = np.zeros(O), np.zeros(R)
                by_obs: dict = {}
                for (o, r), (p, nb) in br.items():
                    po[obs_i[o]] += p
                    pr[rew_i[r]] += p
                    by_obs.setdefault(o, []).append((p, r, nb))
                for (o, r), (p, _) in br.items():
                    if abs(p - po[obs_i[o]] * pr[rew_i[r]]) > 1e-9:
                        raise UnsupportedEnvironmentError(
                            f"{env.name}: observation and reward are dependent given the history"
                        )
                for o, items in by_obs.items():
                    total = sum(p for p, _, _ in items)
                    merged: dict = {}
                    for p, _, nb in items:
                        for h, ph in nb.items():
                            merged[h] = merged.get(h, 0.0) + ph * p / total
                    mkey = _belief_key(merged)
                    if any(_belief_key(nb) != mkey for _, _, nb in items):
                        raise UnsupportedEnvironmentError(
                            f"{env.name}: the reward reveals hidden state beyond the observation"
                        )
                    if mkey not in nxt_layer:
                        nxt_layer[mkey] = len(labels)
                        labels.append(merged)
                        layer_of.append(t + 1)
                    tau[q, ai, obs_i[o]] = nxt_layer[mkey]
                th_o[q, ai], th_r[q, ai] = po, pr
        layer = nxt_layer
    # dead step H, then the absorbing layer H + 1
    final = len(labels)
    labels.append("final")
    layer_of.append(H + 1)
    for q in layer.values():
        for ai in range(A):
            th_o[q, ai] = np.zeros(O)
            th_o[q, ai][a.terminal_index] = 1.0
            th_r[q, ai] = np.zeros(R)
            th_r[q, ai][a.rewards.index(0)] = 1.0
            tau[q, ai, a.terminal_index] = final
    n = len(labels)
    theta_o = np.zeros((n, A + 1, O))
    theta_r = np.zeros((n, A + 1, R))
    tau_arr = np.full((n, A + 1, O), -1, dtype=np.int64)
    for (q, ai), v in th_o.items():
        theta_o[q, ai] = v
    for (q, ai), v in th_r.items():
        theta_r[q, ai] = v
    for (q, ai, o), v in tau.items():
        tau_arr[q, ai, o] = v
    raw = GroundTruthRdp(a, np.array(layer_of), theta_o, theta_r, tau_arr, labels)
    return minimise(raw)


def minimise(rdp: GroundTruthRdp) -> GroundTruthRdp:
    """Merge states of a layer whose outputs and successor classes coincide.

    Works bottom-up; with deterministic transitions this identifies exactly
    the states that induce equal suffix distributions.
    """
    H = rdp.alphabet.horizon
    cls = np.full(rdp.n_states, -1, dtype=np.int64)
    reps: list = []
    for t in range(H + 1, -1, -1):
        sigs: dict = {}
        for q in np.flatnonzero(rdp.layer_of == t):
            succ = np.where(rdp.tau[q] >= 0, cls[np.maximum(rdp.tau[q], 0)], -1)
            sig = (
                np.round(rdp.theta_o[q], 9).tobytes(),
                np.round(rdp.theta_r[q], 9).tobytes(),
                succ.tobytes(),
            )
            if sig not in sigs:
                sigs[sig] = len(reps)
                reps.append(int(q))
            cls[q] = sigs[sig]
    # renumber classes in (layer, first appearance) order
    order = sorted(range(len(reps)), key=lambda c: (rdp.layer_of[reps[c]], reps[c]))
    new_id = {c: i for i, c in enumerate(order)}
    keep = [reps[c] for c in order]
    tau = rdp.tau[keep]
    tau = np.where(tau >= 0, np.vectorize(lambda x: new_id[cls[x]] if x >= 0 else -1, otypes=[np.int64])(tau), -1)
    labels = []
    for c in order:
        members = [q for q in range(rdp.n_states) if cls[q] == c]
        labels.append(rdp.labels[members[0]] if len(members) == 1 else [rdp.labels[q] for q in members])
    return GroundTruthRdp(rdp.alphabet, rdp.layer_of[keep], rdp.theta_o[keep], rdp.theta_r[keep], tau, labels)


# -- exact optimum ------------------------------------------------------------------------


def optimal_return(env: Environment) -> float:
    """Optimal expected return of ``env`` over history-dependent policies.

    Expectimax over beliefs with memoisation; the policy may condition on
    observed rewards as well as observations.
    """
    H = env.horizon
    memo: dict = {}

    def value(t: int, belief: dict) -> float:
        if t >= H:
            return 0.0
        key = (t, _belief_key(belief))
        if key in memo:
            return memo[key]
        best = -math.inf
        for act in env.actions:
            v = 0.0
            for (o, r), (p, nb) in _branch(env, belief, act).items():
                v += p * (r + value(t + 1, nb))
            best = max(best, v)
        memo[key] = best
        return best

    reset: dict = {}
    for p, h, o in env.reset_outcomes():
        reset.setdefault(o, {})
        reset[o][h] = reset[o].get(h, 0.0) + p
    return sum(sum(bh.values()) * value(1, _normalise(bh)) for bh in reset.values())
