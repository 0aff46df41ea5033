"""Certainty-equivalent planning on a learned layered RDP.

Output distributions are replaced by empirical frequencies, transitions that
were never observed lead to a sink worth 0, and the optimal regular policy is
found by backward induction over the layers.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .environments import Environment, _pick
from .exceptions import UsageError
from .learner import AdactH, LearnedRdp, _check_dataset
from .trace import Dataset

log = logging.getLogger(__name__)


@dataclass
class EstimatedOutputs:
    """Observation and reward counts per learned state and action code."""

    counts_o: np.ndarray
    counts_r: np.ndarray

    @property
    def visits(self) -> np.ndarray:
        return self.counts_o.sum(axis=-1)

    def _normalise(self, counts):
        n = counts.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, counts / np.maximum(n, 1), np.nan)

    @property
    def theta_o(self) -> np.ndarray:
        """``theta_o[q, a, o]``; NaN where ``(q, a)`` was never visited."""
        return self._normalise(self.counts_o)

    @property
    def theta_r(self) -> np.ndarray:
        return self._normalise(self.counts_r)


def estimate_outputs(rdp: LearnedRdp, dataset: Dataset) -> EstimatedOutputs:
    a = rdp.alphabet
    routes = rdp.route(dataset)
    acts = dataset.codes[:, :, 0].astype(np.int64)
    obs = dataset.obs_indices()
    rew = dataset.codes[:, :, -1].astype(np.int64)
    shape = (rdp.n_states, a.n_actions + 1)
    co = np.zeros(shape + (a.n_obs,), dtype=np.int64)
    cr = np.zeros(shape + (a.n_rewards,), dtype=np.int64)
    for t in range(a.horizon + 1):
        q = routes[:, t]
        ok = q >= 0
        np.add.at(co, (q[ok], acts[ok, t], obs[ok, t]), 1)
        np.add.at(cr, (q[ok], acts[ok, t], rew[ok, t]), 1)
    return EstimatedOutputs(co, cr)


@dataclass
class RegularPolicy:
    """Deterministic action code per learned state (``-1`` where none) and values."""

    actions: np.ndarray
    values: np.ndarray
    q_values: np.ndarray
    action_symbols: tuple
    sink_states: int = 0

    @property
    def value(self) -> float:
        return float(self.values[0])

    def to_json(self) -> dict:
        return {
            "actions": {str(q): self.action_symbols[a] for q, a in enumerate(self.actions) if a >= 0},
            "V0": self.value,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False)


def value_iteration(rdp: LearnedRdp, outputs: EstimatedOutputs) -> RegularPolicy:
    """Backward induction; ties go to the lowest action code."""
    a = rdp.alphabet
    tau = rdp.tau_array()
    rvals = np.asarray(a.rewards, dtype=float)
    th_o, th_r = outputs.theta_o, outputs.theta_r
    visits = outputs.visits
    Q = np.full((rdp.n_states, a.n_actions + 1), np.nan)
    V = np.zeros(rdp.n_states)
    pi = np.full(rdp.n_states, -1, dtype=np.int64)
    sinks = 0
    for t in range(len(rdp.layers) - 2, -1, -1):
        for q in rdp.layers[t]:
            allowed = [a.start_index] if t == 0 else range(a.n_actions)
            for act in allowed:
                if visits[q, act] == 0:
                    continue
                cont = np.where(tau[q, act] >= 0, V[np.maximum(tau[q, act], 0)], 0.0)
                Q[q, act] = th_r[q, act] @ rvals + th_o[q, act] @ cont
            row = Q[q]
            if np.all(np.isnan(row)):
                sinks += 1
                continue
            best = int(np.nanargmax(row))
            pi[q], V[q] = best, row[best]
    if sinks:
        log.warning("%d reachable states had no visited action and were valued as sinks", sinks)
    return RegularPolicy(pi, V, Q, a.slot_domains[0], sinks)


@dataclass(frozen=True)
class EvalResult:
    mean: float
    stderr: float
    n_episodes: int
    fallback_steps: int
    fallback_episodes: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def evaluate_policy(env: Environment, rdp: LearnedRdp, policy: RegularPolicy,
                    n_episodes: int = 1000, seed: int = 0) -> EvalResult:
    """Run ``policy`` in ``env`` while tracking the learned state online.

    When the automaton has no transition for what was observed, the last
    action is repeated for the rest of the episode (action code 0 if none was
    taken yet); such steps are counted as fallbacks.
    """
    if env.alphabet != rdp.alphabet:
        raise UsageError("environment alphabet does not match the learned automaton")
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    a, tab = env.alphabet, env.table
    tau = rdp.tau_array()
    rvals = np.asarray(a.rewards, dtype=float)
    rng = np.random.default_rng(seed)
    N, H = int(n_episodes), a.horizon
    j = _pick(np.broadcast_to(tab.reset_cum, (N, tab.reset_cum.size)), rng.random(N))
    hidden = tab.reset_next[j]
    q = tau[0, a.start_index, tab.reset_obs[j]]
    total = np.zeros(N)
    last = np.zeros(N, dtype=np.int64)
    fell = np.zeros(N, dtype=bool)
    fallback_steps = 0
    for _ in range(1, H):
        known = q >= 0
        chosen = np.where(known, policy.actions[np.maximum(q, 0)], -1)
        miss = chosen < 0
        fallback_steps += int(miss.sum())
        fell |= miss
        act = np.where(miss, last, chosen)
        k = _pick(tab.cum[hidden, act], rng.random(N))
        o = tab.obs[hidden, act, k]
        total += rvals[tab.rew[hidden, act, k]]
        hidden = tab.nxt[hidden, act, k]
        q = np.where(q >= 0, tau[np.maximum(q, 0), act, o], -1)
        last = act
    stderr = float(total.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return EvalResult(float(total.mean()), stderr, N, fallback_steps, int(fell.sum()))


class RegularPlanner(BaseEstimator):
    """Learn an automaton, estimate its outputs and plan, in one estimator.

    ``predict`` returns, for each episode of a dataset, the action code the
    policy picks after every history prefix (``-1`` where the route is lost).
    """

    def __init__(self, delta=0.05, tester="lang", family=(1, 1, 1), cms_prune=True, seed=0):
        self.delta = delta
        self.tester = tester
        self.family = family
        self.cms_prune = cms_prune
        self.seed = seed

    def fit(self, X, y=None):
        X = _check_dataset(X)
        learner = AdactH(delta=self.delta, tester=self.tester, family=self.family,
                         cms_prune=self.cms_prune, seed=self.seed).fit(X)
        self.rdp_ = learner.rdp_
        self.outputs_ = estimate_outputs(self.rdp_, X)
        self.policy_ = value_iteration(self.rdp_, self.outputs_)
        return self

    def predict(self, X):
        check_is_fitted(self, "policy_")
        routes = self.rdp_.route(_check_dataset(X))[:, 1:]
        return np.where(routes >= 0, self.policy_.actions[np.maximum(routes, 0)], -1)

    def evaluate(self, env: Environment, n_episodes: int = 1000, seed: int = 0) -> EvalResult:
        check_is_fitted(self, "policy_")
        return evaluate_policy(env, self.rdp_, self.policy_, n_episodes, seed)
