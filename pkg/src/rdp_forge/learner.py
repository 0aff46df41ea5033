"""AdaCT-H state merging over a layered automaton.

At every step ``t`` the episodes routed to each state ``q`` of layer ``t``
are split by their step-``t`` action and observation into candidates
``(q, a, o)``.  Candidates are processed by decreasing support; the first is
promoted, every other one is compared against the states promoted so far
and either promoted (distinct from all of them) or merged into the closest
similar state.

Suffix statistics are computed once per layer for all episodes and then
aggregated per candidate:

* ``lang``: the membership matrix of every suffix in every family language,
  summed per state into count vectors;
* ``prefix``: dense prefix ids, compared per pair by bincount;
* ``cms``: per-layer prefix fingerprints folded into one sketch store per
  state, with hash seeds shared by the whole layer.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .exceptions import ConfigurationError, UsageError
from .languages import build_family, membership_matrix
from .trace import AlphabetSpec, Dataset, Step

log = logging.getLogger(__name__)

UNKNOWN = -1
RDP_FORMAT = "rdp-forge-rdp/1"


@dataclass
class LearnedRdp:
    """Layered acyclic automaton returned by :func:`adact_h`.

    ``tau`` maps ``(state, action code, observation index)`` to the next
    state; the start action has code ``A``.  ``sizes[q]`` is the number of
    training episodes routed through ``q``.
    """

    alphabet: AlphabetSpec
    layers: list
    tau: dict
    sizes: list
    provenance: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    initial = 0

    @property
    def n_states(self) -> int:
        return sum(len(layer) for layer in self.layers)

    @property
    def horizon(self) -> int:
        return self.alphabet.horizon

    def layer_of(self) -> np.ndarray:
        out = np.empty(self.n_states, dtype=np.int64)
        for t, layer in enumerate(self.layers):
            out[layer] = t
        return out

    def tau_array(self) -> np.ndarray:
        """Dense ``(Q, A + 1, O)`` transition table with ``-1`` for missing entries."""
        a = self.alphabet
        arr = np.full((self.n_states, a.n_actions + 1, a.n_obs), UNKNOWN, dtype=np.int64)
        for (q, act, o), nq in self.tau.items():
            arr[q, act, o] = nq
        return arr

    def route(self, dataset: Dataset) -> np.ndarray:
        """State of every episode prefix, shape ``(N, H + 2)``; column ``t`` is layer ``t``."""
        if dataset.alphabet != self.alphabet:
            raise UsageError("dataset alphabet does not match the learned automaton")
        tau = self.tau_array()
        acts = dataset.codes[:, :, 0]
        obs = dataset.obs_indices()
        N, H = len(dataset), self.horizon
        out = np.full((N, H + 2), UNKNOWN, dtype=np.int64)
        q = np.zeros(N, dtype=np.int64)
        out[:, 0] = q
        for t in range(H + 1):
            known = q >= 0
            nq = np.full(N, UNKNOWN, dtype=np.int64)
            nq[known] = tau[q[known], acts[known, t], obs[known, t]]
            q = nq
            out[:, t + 1] = q
        return out

    def map_history(self, history) -> int:
        """Fold ``tau`` over a step sequence; returns :data:`UNKNOWN` on a missing transition."""
        a = self.alphabet
        steps = list(history)
        if len(steps) > self.horizon + 1:
            raise UsageError(f"history of {len(steps)} steps exceeds horizon {self.horizon}")
        q = self.initial
        for t, step in enumerate(steps):
            if isinstance(step, (Step, tuple)) and not isinstance(step, np.ndarray):
                step = Step(*step)
                if (t == 0) != (step.action == a.start_action):
                    raise UsageError(f"start action misplaced at step {t}")
                codes = a.encode_step(step)
            else:
                codes = np.asarray(step)
            key = (q, int(codes[0]), int(a.obs_index(codes[1:-1])))
            q = self.tau.get(key, UNKNOWN)
            if q == UNKNOWN:
                return UNKNOWN
        return q

    # -- serialisation ------------------------------------------------------------
    def to_json(self) -> dict:
        a = self.alphabet
        actions = a.slot_domains[0]
        trans = [
            [q, actions[act], list(a.obs_from_index(o)), nq]
            for (q, act, o), nq in sorted(self.tau.items())
        ]
        return {
            "format": RDP_FORMAT,
            "alphabet": a.to_json(),
            "H": a.horizon,
            "layers": self.layers,
            "transitions": trans,
            "sizes": self.sizes,
            "provenance": self.provenance,
            "stats": self.stats,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LearnedRdp":
        if obj.get("format") != RDP_FORMAT:
            raise UsageError("not a serialized learned RDP")
        a = AlphabetSpec.from_json(obj["alphabet"], int(obj["H"]))
        tau = {}
        for q, act, obs, nq in obj["transitions"]:
            codes = [a.symbol_index(i + 1, s) for i, s in enumerate(obs)]
            tau[int(q), a.symbol_index(0, act), int(a.obs_index(np.array(codes)))] = int(nq)
        return cls(a, [list(map(int, l)) for l in obj["layers"]], tau, list(obj["sizes"]),
                   obj.get("provenance", {}), obj.get("stats", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "LearnedRdp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# -- per-layer statistics --------------------------------------------------------------


class _LangLayer:
    def __init__(self, dataset, t, tester, family_cache):
        a = dataset.alphabet
        ell = (a.horizon - t) * a.n_slots
        key = (tester.family, ell)
        if key not in family_cache:
            family_cache[key] = build_family(a, *tester.family, ell)
        self.family = family_cache[key]
        self.member = membership_matrix(a, self.family.languages, dataset.codes[:, t + 1:])
        self.delta = tester.delta

    def stats(self, rows):
        return self.member[rows].sum(axis=0, dtype=np.int64)

    @staticmethod
    def merge(s1, s2):
        return s1 + s2

    def compare(self, t, cand, n_c, promoted, n_p):
        p = np.asarray(promoted, dtype=float) / np.asarray(n_p, dtype=float)[:, None]
        dist = np.abs(p - cand / n_c).max(axis=1)
        mins = np.minimum(n_c, n_p)
        thr = np.sqrt(2 * np.log(4 * len(self.family) / self.delta) / mins)
        return dist, thr


class _PrefixLayer:
    def __init__(self, dataset, t, tester, _cache):
        self.alphabet = dataset.alphabet
        self.pids = metrics.prefix_ids(dataset.alphabet, dataset.codes[:, t + 1:])
        self.delta = tester.delta

    def stats(self, rows):
        return np.asarray(rows)

    @staticmethod
    def merge(s1, s2):
        return np.concatenate([s1, s2])

    def _distance(self, r1, r2):
        n1, n2 = len(r1), len(r2)
        best = 0.0
        for u in range(self.pids.shape[1]):
            ids = np.concatenate([self.pids[r1, u], self.pids[r2, u]])
            _, inv = np.unique(ids, return_inverse=True)
            inv = inv.reshape(-1)
            k = int(inv.max()) + 1
            d = np.abs(np.bincount(inv[:n1], minlength=k) / n1 - np.bincount(inv[n1:], minlength=k) / n2)
            best = max(best, float(d.max()))
        return best

    def compare(self, t, cand, n_c, promoted, n_p):
        dist = np.array([self._distance(cand, rows) for rows in promoted])
        thr = np.array([metrics.prefix_threshold(self.alphabet, t, min(n_c, n), self.delta) for n in n_p])
        return dist, thr


class _CmsLayer:
    def __init__(self, dataset, t, tester, _cache):
        a = dataset.alphabet
        self.alphabet = a
        self.t = t
        self.delta = tester.delta
        self.prune = tester.cms_prune
        delta_c = tester.cms_delta_c or metrics.cms_delta_c(a, t, tester.delta)
        eps = tester.cms_epsilon or metrics.cms_epsilon(len(dataset), delta_c)
        self.template = metrics.SketchStore.empty(a, t + 1, delta_c, eps, seed=tester.seed)
        self.keys = metrics.suffix_prefix_keys(a, dataset.codes[:, t + 1:])
        self.params = {"delta_c": delta_c, "epsilon": eps, "depth": self.template.sketches[0].depth,
                       "width": self.template.sketches[0].width}

    def stats(self, rows):
        store = self.template.empty_like()
        store.add_keys(self.keys[rows])
        return store

    @staticmethod
    def merge(s1, s2):
        s1.merge_inplace(s2)
        return s1

    def compare(self, t, cand, n_c, promoted, n_p):
        dist, thr = [], []
        for store, n in zip(promoted, n_p):
            th = metrics.cms_threshold(self.alphabet, t, min(n_c, n), self.delta)
            d = metrics.prefix_linf_cms(cand, store, cutoff=th if self.prune else None)
            dist.append(d)
            thr.append(th)
        return np.array(dist), np.array(thr)


_LAYERS = {"lang": _LangLayer, "prefix": _PrefixLayer, "cms": _CmsLayer}


def _check_dataset(dataset) -> Dataset:
    if not isinstance(dataset, Dataset):
        raise UsageError(f"expected a Dataset, got {type(dataset).__name__}")
    if len(dataset) == 0:
        raise UsageError("cannot learn from an empty dataset")
    return dataset


def adact_h(dataset: Dataset, delta: float = 0.05, tester: Optional[metrics.TesterConfig] = None,
            test_log: Optional[list] = None) -> LearnedRdp:
    """Learn a layered RDP from ``dataset``.

    ``tester`` defaults to the language test over ``X_{1,1,1}``.  When
    ``test_log`` is a list, one record per distinctness test is appended.
    """
    dataset = _check_dataset(dataset)
    if tester is None:
        tester = metrics.TesterConfig("lang", delta)
    elif tester.delta != delta:
        tester = metrics.TesterConfig(**{**tester.__dict__, "delta": delta})
    a = dataset.alphabet
    H, A, O = a.horizon, a.n_actions, a.n_obs
    N = len(dataset)
    acts = dataset.codes[:, :, 0].astype(np.int64)
    obs = dataset.obs_indices()
    t0 = time.perf_counter()

    layers = [[0]]
    sizes = [N]
    tau: dict = {}
    cur = np.zeros(N, dtype=np.int64)  # state of every episode in the current layer
    next_id = 1
    family_cache: dict = {}
    per_layer = []
    cms_params = None

    for t in range(H + 1):
        keys = (cur * (A + 1) + acts[:, t]) * O + obs[:, t]
        uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        order = sorted(range(len(uniq)), key=lambda c: (-counts[c], uniq[c]))
        cand_of = [(int(k // ((A + 1) * O)), int(k // O % (A + 1)), int(k % O)) for k in uniq]
        info = {"t": t, "candidates": len(uniq), "tests": 0, "merges": 0,
                "min_candidate": int(counts.min()), "max_candidate": int(counts.max())}

        if t == H:
            # every suffix after the terminal step is empty: one absorbing state
            final = next_id
            for c in range(len(uniq)):
                tau[cand_of[c]] = final
            layers.append([final])
            sizes.append(N)
            info.update(states=1, merges=len(uniq) - 1)
            per_layer.append(info)
            break

        layer_stats = _LAYERS[tester.kind](dataset, t, tester, family_cache)
        if tester.kind == "cms" and cms_params is None:
            cms_params = layer_stats.params
        sort_idx = np.argsort(inv, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(np.bincount(inv, minlength=len(uniq)))])
        rows_of = lambda c: sort_idx[bounds[c]:bounds[c + 1]]  # noqa: E731

        promoted_ids, promoted_stats, promoted_n = [], [], []
        assign = np.empty(len(uniq), dtype=np.int64)
        for rank, c in enumerate(order):
            st = layer_stats.stats(rows_of(c))
            n_c = int(counts[c])
            if rank > 0:
                dist, thr = layer_stats.compare(t, st, n_c, promoted_stats, promoted_n)
                info["tests"] += len(dist)
                similar = np.flatnonzero(dist < thr)
                if test_log is not None:
                    for j in range(len(dist)):
                        test_log.append({"t": t, "candidate": list(cand_of[c]), "state": promoted_ids[j],
                                         "distance": float(dist[j]), "threshold": float(thr[j]),
                                         "distinct": bool(dist[j] >= thr[j])})
                if similar.size:
                    j = int(similar[np.argmin(dist[similar])])
                    promoted_stats[j] = layer_stats.merge(promoted_stats[j], st)
                    promoted_n[j] += n_c
                    assign[c] = promoted_ids[j]
                    info["merges"] += 1
                    continue
            promoted_ids.append(next_id)
            promoted_stats.append(st)
            promoted_n.append(n_c)
            assign[c] = next_id
            next_id += 1
        for c in range(len(uniq)):
            tau[cand_of[c]] = int(assign[c])
        layers.append(promoted_ids)
        sizes.extend(promoted_n)
        cur = assign[inv]
        info["states"] = len(promoted_ids)
        per_layer.append(info)
        log.debug("layer %d: %d candidates -> %d states", t + 1, len(uniq), len(promoted_ids))

    elapsed = time.perf_counter() - t0
    provenance = {"tester": tester.to_json(), "delta": delta, "dataset": dataset.fingerprint(),
                  "n_episodes": N, "metadata": dataset.metadata}
    if cms_params is not None:
        provenance["cms_first_layer"] = cms_params
    rdp = LearnedRdp(a, layers, tau, sizes, provenance)
    rdp.stats = {
        "Q": rdp.n_states,
        "layer_sizes": [len(l) for l in layers],
        "merges": sum(i["merges"] for i in per_layer),
        "tests": sum(i["tests"] for i in per_layer),
        "learn_seconds": elapsed,
        "layers": per_layer,
    }
    return rdp


def learn_stats(rdp: LearnedRdp) -> dict:
    """JSON-ready report: per-layer state counts, merges, tests and candidate sizes."""
    return json.loads(json.dumps(rdp.stats))


class AdactH(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`adact_h`.

    ``fit`` learns the automaton; ``transform`` maps each episode of a dataset
    to its learned state at every layer (``-1`` where the route is unknown).
    """

    def __init__(self, delta=0.05, tester="lang", family=(1, 1, 1), store=None,
                 cms_delta_c=None, cms_epsilon=None, cms_prune=True, seed=0, record_tests=False):
        self.delta = delta
        self.tester = tester
        self.family = family
        self.store = store
        self.cms_delta_c = cms_delta_c
        self.cms_epsilon = cms_epsilon
        self.cms_prune = cms_prune
        self.seed = seed
        self.record_tests = record_tests

    def tester_config(self) -> metrics.TesterConfig:
        return metrics.TesterConfig(
            kind=self.tester, delta=self.delta, family=self.family, store=self.store,
            cms_delta_c=self.cms_delta_c, cms_epsilon=self.cms_epsilon,
            cms_prune=self.cms_prune, seed=self.seed,
        )

    def fit(self, X, y=None):
        config = self.tester_config()
        self.test_log_ = [] if self.record_tests else None
        self.rdp_ = adact_h(_check_dataset(X), self.delta, config, self.test_log_)
        self.n_states_ = self.rdp_.n_states
        return self

    def transform(self, X):
        check_is_fitted(self, "rdp_")
        return self.rdp_.route(_check_dataset(X))
