"""Distances between suffix distributions and the three distinctness tests.

Suffix multisets live in one of two stores:

* :class:`ExactStore` keeps the suffix step codes with optional weights, so
  it can hold either an empirical multiset or an exact distribution.
* :class:`SketchStore` keeps one Count-Min sketch per prefix length plus the
  exact number of suffixes.  Every suffix contributes exactly one prefix of
  each length, so each sketch has ``||v||_1 = n``.

All thresholds use natural logarithms and a distance equal to the threshold
counts as distinct.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cms
from .exceptions import (
    ConfigurationError,
    EnumerationCapError,
    IncompatibleSketchError,
    UndefinedEstimateError,
    UsageError,
)
from .languages import LanguageFamily, membership_matrix
from .trace import AlphabetSpec

KINDS = ("prefix", "cms", "lang")
DEFAULT_NODE_CAP = 10**7


def step_ids(alphabet: AlphabetSpec, codes: np.ndarray) -> np.ndarray:
    """Mixed-radix id of every step, shape ``codes.shape[:-1]``."""
    codes = np.asarray(codes, dtype=np.int64)
    out = np.zeros(codes.shape[:-1], dtype=np.int64)
    for s, size in enumerate(alphabet.slot_sizes):
        out = out * int(size) + codes[..., s]
    return out


def prefix_ids(alphabet: AlphabetSpec, codes: np.ndarray) -> np.ndarray:
    """Dense ids of every step prefix: column ``u`` identifies ``e[:u + 1]``.

    Two rows share an id in column ``u`` iff their first ``u + 1`` steps agree.
    """
    sid = step_ids(alphabet, codes)
    n, L = sid.shape
    out = np.empty((n, L), dtype=np.int64)
    radix = int(np.prod(alphabet.slot_sizes))
    pid = np.zeros(n, dtype=np.int64)
    for u in range(L):
        _, pid = np.unique(pid * radix + sid[:, u], return_inverse=True)
        pid = pid.reshape(-1)
        out[:, u] = pid
    return out


# -- stores ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExactStore:
    """Suffixes starting at step ``t``: codes ``(n, H - t + 1, m + 2)`` with weights."""

    alphabet: AlphabetSpec
    t: int
    codes: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int32)
        L = self.alphabet.horizon - self.t + 1
        if codes.ndim != 3 or codes.shape[1:] != (L, self.alphabet.n_slots):
            raise UsageError(f"suffix codes of shape {codes.shape} do not start at step {self.t}")
        object.__setattr__(self, "codes", codes)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (codes.shape[0],) or np.any(w < 0):
                raise UsageError("weights must be one non-negative number per suffix")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_dataset(cls, dataset, t: int, rows=None) -> "ExactStore":
        codes = dataset.codes[:, t:] if rows is None else dataset.codes[rows, t:]
        return cls(dataset.alphabet, t, codes)

    @property
    def n(self) -> int:
        return int(self.codes.shape[0])

    @property
    def mass(self) -> np.ndarray:
        """Normalised probability of each stored suffix."""
        if self.n == 0:
            raise UndefinedEstimateError("empty suffix store")
        w = np.ones(self.n) if self.weights is None else self.weights
        total = w.sum()
        if total <= 0:
            raise UndefinedEstimateError("suffix store has zero total weight")
        return w / total

    def merge(self, other: "ExactStore") -> "ExactStore":
        _same_layer(self, other)
        if (self.weights is None) != (other.weights is None):
            raise UsageError("cannot merge weighted and unweighted stores")
        w = None if self.weights is None else np.concatenate([self.weights, other.weights])
        return ExactStore(self.alphabet, self.t, np.concatenate([self.codes, other.codes]), w)


def layer_seed(seed: int, t: int, u: int) -> list:
    return [int(seed) & 0xFFFFFFFF, int(t), int(u)]


def cms_delta_c(alphabet: AlphabetSpec, t: int, delta: float) -> float:
    """``delta / (8 (AOR)^(H - t))`` computed in log space."""
    log = math.log(delta) - math.log(8) - (alphabet.horizon - t) * math.log(_aor(alphabet))
    return max(math.exp(log), 1e-300)


def cms_epsilon(n_total: int, delta_c: float) -> float:
    """``sqrt(ln(2 / delta_c) / (2 N))``."""
    if n_total < 1:
        raise UsageError("dataset size must be positive")
    return math.sqrt(math.log(2.0 / delta_c) / (2.0 * n_total))


def suffix_prefix_keys(alphabet: AlphabetSpec, codes: np.ndarray) -> np.ndarray:
    """Fingerprint of every step prefix of every suffix, shape ``(n, L)``."""
    tok = np.asarray(codes, dtype=np.int64) + alphabet.token_offsets
    n, L, width = tok.shape
    state = cms.hash_start(n)
    keys = np.empty((n, L), dtype=np.uint64)
    for u in range(L):
        for s in range(width):
            state = cms.hash_push(state, tok[:, u, s])
        keys[:, u] = cms.hash_finish(state, (u + 1) * width)
    return keys


@dataclass(eq=False)
class SketchStore:
    """Sketched prefix counts of the suffixes starting at step ``t``."""

    alphabet: AlphabetSpec
    t: int
    sketches: list
    n: int = 0

    @classmethod
    def empty(cls, alphabet: AlphabetSpec, t: int, delta_c: float, epsilon: float, seed: int = 0):
        L = alphabet.horizon - t + 1
        sk = [cms.Sketch.new(delta_c, epsilon, layer_seed(seed, t, u)) for u in range(L)]
        return cls(alphabet, t, sk, 0)

    @classmethod
    def from_codes(cls, alphabet, t, codes, delta_c, epsilon, seed=0) -> "SketchStore":
        store = cls.empty(alphabet, t, delta_c, epsilon, seed)
        store.add_codes(codes)
        return store

    def add_keys(self, keys: np.ndarray) -> None:
        """Insert precomputed prefix keys ``(n, L)`` (see :func:`suffix_prefix_keys`)."""
        keys = np.asarray(keys, dtype=np.uint64)
        if keys.ndim != 2 or keys.shape[1] != len(self.sketches):
            raise UsageError("prefix keys do not match the store's suffix length")
        if keys.shape[0] == 0:
            return
        for u, sk in enumerate(self.sketches):
            sk.add_keys(keys[:, u])
        self.n += keys.shape[0]

    def add_codes(self, codes: np.ndarray) -> None:
        self.add_keys(suffix_prefix_keys(self.alphabet, codes))

    def empty_like(self) -> "SketchStore":
        return SketchStore(self.alphabet, self.t, [s.empty_like() for s in self.sketches], 0)

    def compatible(self, other: "SketchStore") -> bool:
        return (
            self.t == other.t
            and len(self.sketches) == len(other.sketches)
            and all(a.compatible(b) for a, b in zip(self.sketches, other.sketches))
        )

    def merge_inplace(self, other: "SketchStore") -> None:
        if not self.compatible(other):
            raise IncompatibleSketchError("sketch stores differ in layer or hash seeds")
        for a, b in zip(self.sketches, other.sketches):
            a.merge_inplace(b)
        self.n += other.n

    def merge(self, other: "SketchStore") -> "SketchStore":
        out = SketchStore(self.alphabet, self.t, [s.merge(s.empty_like()) for s in self.sketches], self.n)
        out.merge_inplace(other)
        return out

    @property
    def nbytes(self) -> int:
        return sum(s.counters.nbytes for s in self.sketches)


def _same_layer(z1, z2) -> None:
    if z1.t != z2.t or z1.alphabet != z2.alphabet:
        raise UsageError("suffix stores belong to different layers or alphabets")


def _nonempty(*stores) -> None:
    for z in stores:
        if z.n == 0:
            raise UndefinedEstimateError("distance is undefined for an empty suffix store")


def _aor(alphabet: AlphabetSpec) -> int:
    return alphabet.n_actions * alphabet.n_obs * alphabet.n_rewards


# -- distances -------------------------------------------------------------------


def prefix_linf(z1: ExactStore, z2: ExactStore) -> float:
    """``max_u max_e |p1(e*) - p2(e*)|`` over step prefixes present in either store."""
    _same_layer(z1, z2)
    _nonempty(z1, z2)
    m1, m2 = z1.mass, z2.mass
    pids = prefix_ids(z1.alphabet, np.concatenate([z1.codes, z2.codes]))
    n1 = z1.n
    best = 0.0
    for u in range(pids.shape[1]):
        k = int(pids[:, u].max()) + 1
        p1 = np.bincount(pids[:n1, u], weights=m1, minlength=k)
        p2 = np.bincount(pids[n1:, u], weights=m2, minlength=k)
        best = max(best, float(np.abs(p1 - p2).max()))
    return best


def _step_space(alphabet: AlphabetSpec, absolute_t: int) -> np.ndarray:
    """Global token ids ``(S, m + 2)`` of every syntactically possible step at ``absolute_t``."""
    if absolute_t == 0:
        actions = [alphabet.start_index]
    else:
        actions = list(range(alphabet.n_actions))
    axes = [np.asarray(actions)] + [np.arange(len(d)) for d in alphabet.obs_features]
    axes.append(np.arange(alphabet.n_rewards))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, alphabet.n_slots)
    return grid + alphabet.token_offsets


def prefix_linf_cms(
    s1: SketchStore,
    s2: SketchStore,
    cutoff: Optional[float] = None,
    node_cap: int = DEFAULT_NODE_CAP,
) -> float:
    """Prefix distance from sketch point queries, searching the whole prefix space.

    Prefixes are expanded breadth first over every syntactically possible
    step.  A prefix whose estimate is zero in both stores has a true count of
    zero (sketches never underestimate), so its extensions are skipped.  With
    ``cutoff`` set, a prefix is also skipped once
    ``max_i(q_i / n_i + eps_i) < cutoff``: on the sketch accuracy event no
    extension can then reach ``cutoff``.  The search stops early once the
    distance reaches ``cutoff``.
    """
    _same_layer(s1, s2)
    _nonempty(s1, s2)
    if not s1.compatible(s2):
        raise IncompatibleSketchError("sketch stores differ in layer or hash seeds")
    a = s1.alphabet
    width = a.n_slots
    rows = np.arange(s1.sketches[0].depth)[:, None]
    frontier = cms.hash_start(1)
    best = 0.0
    visited = 0
    for u, (k1, k2) in enumerate(zip(s1.sketches, s2.sketches)):
        space = _step_space(a, s1.t + u)
        state = np.repeat(frontier, len(space))
        for s in range(width):
            state = cms.hash_push(state, np.tile(space[:, s], len(frontier)))
        keys = cms.hash_finish(state, (u + 1) * width)
        visited += keys.size
        if visited > node_cap:
            raise EnumerationCapError(f"prefix search exceeded {node_cap} nodes")
        cols = k1.columns(keys)
        q1 = k1.counters[rows, cols].min(axis=0) / s1.n
        q2 = k2.counters[rows, cols].min(axis=0) / s2.n
        best = max(best, float(np.abs(q1 - q2).max(initial=0.0)))
        if cutoff is not None and best >= cutoff:
            return best
        keep = (q1 > 0) | (q2 > 0)
        if cutoff is not None and u + 1 < len(s1.sketches):
            e1 = k1.epsilon * s1.sketches[u + 1].total / s1.n
            e2 = k2.epsilon * s2.sketches[u + 1].total / s2.n
            keep &= np.maximum(q1 + e1, q2 + e2) >= cutoff
        frontier = state[keep]
        if frontier.size == 0:
            break
    return best


def _lang_vectors(family: LanguageFamily, z: ExactStore) -> np.ndarray:
    a = z.alphabet
    if family.ell != z.codes.shape[1] * a.n_slots:
        raise UsageError(f"family length {family.ell} != trace length {z.codes.shape[1] * a.n_slots}")
    member = membership_matrix(a, family.languages, z.codes)
    return z.mass @ member


def lang_metric(family: LanguageFamily, z1: ExactStore, z2: ExactStore) -> float:
    """``max_X |p1(X) - p2(X)|`` over the languages of ``family``."""
    _same_layer(z1, z2)
    _nonempty(z1, z2)
    return float(np.abs(_lang_vectors(family, z1) - _lang_vectors(family, z2)).max())


# -- thresholds and tests ----------------------------------------------------------


def _log_k(alphabet: AlphabetSpec, t: int) -> float:
    return (alphabet.horizon - t) * math.log(_aor(alphabet))


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise UsageError(f"delta must lie in (0, 1), got {delta}")


def prefix_threshold(alphabet: AlphabetSpec, t: int, n: int, delta: float) -> float:
    """``sqrt(2 ln(8 (ARO)^(H - t) / delta) / n)``."""
    _check_delta(delta)
    return math.sqrt(2 * (math.log(8 / delta) + _log_k(alphabet, t)) / n)


def cms_threshold(alphabet: AlphabetSpec, t: int, n: int, delta: float) -> float:
    """``sqrt(8 ln(16 (ARO)^(H - t) / delta) / n)``."""
    _check_delta(delta)
    return math.sqrt(8 * (math.log(16 / delta) + _log_k(alphabet, t)) / n)


def lang_threshold(family_size: int, n: int, delta: float) -> float:
    """``sqrt(2 ln(4 |X| / delta) / n)``."""
    _check_delta(delta)
    return math.sqrt(2 * math.log(4 * family_size / delta) / n)


@dataclass(frozen=True)
class TestOutcome:
    distinct: bool
    distance: float
    threshold: float

    def to_json(self) -> dict:
        return {"distinct": self.distinct, "distance": self.distance, "threshold": self.threshold}


def run_prefix_test(t, z1, z2, delta, alphabet=None) -> TestOutcome:
    alphabet = alphabet or z1.alphabet
    _nonempty(z1, z2)
    thr = prefix_threshold(alphabet, t, min(z1.n, z2.n), delta)
    d = prefix_linf(z1, z2)
    return TestOutcome(d >= thr, d, thr)


def run_cms_test(t, s1, s2, delta, alphabet=None, prune=True) -> TestOutcome:
    alphabet = alphabet or s1.alphabet
    _nonempty(s1, s2)
    thr = cms_threshold(alphabet, t, min(s1.n, s2.n), delta)
    d = prefix_linf_cms(s1, s2, cutoff=thr if prune else None)
    return TestOutcome(d >= thr, d, thr)


def run_lang_test(family, z1, z2, delta) -> TestOutcome:
    _nonempty(z1, z2)
    thr = lang_threshold(len(family), min(z1.n, z2.n), delta)
    d = lang_metric(family, z1, z2)
    return TestOutcome(d >= thr, d, thr)


def test_distinct_prefix(t, z1, z2, delta, alphabet=None) -> bool:
    return run_prefix_test(t, z1, z2, delta, alphabet).distinct


def test_distinct_cms(t, s1, s2, delta, alphabet=None) -> bool:
    return run_cms_test(t, s1, s2, delta, alphabet).distinct


def test_distinct_lang(family, z1, z2, delta) -> bool:
    return run_lang_test(family, z1, z2, delta).distinct


# keep pytest from collecting the public test_* helpers when imported into test modules
for _fn in (test_distinct_prefix, test_distinct_cms, test_distinct_lang):
    _fn.__test__ = False
TestOutcome.__test__ = False


@dataclass(frozen=True)
class TesterConfig:
    """Which distinctness test the learner runs, with its parameters."""

    __test__ = False  # keep pytest from collecting it by name

    kind: str = "lang"
    delta: float = 0.05
    family: tuple = (1, 1, 1)
    store: Optional[str] = None
    cms_delta_c: Optional[float] = None
    cms_epsilon: Optional[float] = None
    cms_prune: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"tester kind must be one of {KINDS}, got {self.kind!r}")
        _check_delta(self.delta)
        store = self.store or ("sketch" if self.kind == "cms" else "exact")
        if store not in ("exact", "sketch"):
            raise ConfigurationError(f"unknown suffix store {store!r}")
        if self.kind == "lang" and store == "sketch":
            raise ConfigurationError(
                "the language metric needs exact suffix multisets; sketched storage is not supported"
            )
        if self.kind == "prefix" and store == "sketch":
            raise ConfigurationError("the exact prefix test needs exact suffix multisets")
        if self.kind == "cms" and store == "exact":
            raise ConfigurationError("the sketched prefix test needs sketched suffix stores")
        object.__setattr__(self, "store", store)
        object.__setattr__(self, "family", tuple(int(x) for x in self.family))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "delta": self.delta,
            "family": list(self.family) if self.kind == "lang" else None,
            "store": self.store,
            "cms_delta_c": self.cms_delta_c,
            "cms_epsilon": self.cms_epsilon,
            "cms_prune": self.cms_prune,
            "seed": self.seed,
        }
