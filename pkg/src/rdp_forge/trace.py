"""Episodes, factored alphabets, tokenization and the dataset file format.

An episode is a fixed-length sequence of ``H + 1`` steps ``a o / r`` where
``o`` is an ``m``-tuple of observation features.  Step 0 carries the dummy
start action and step ``H`` carries the terminal observation.

Internally a dataset is a dense ``(N, H + 1, m + 2)`` integer array of
per-slot symbol indices: slot 0 is the action, slots ``1..m`` the
observation features and slot ``m + 1`` the reward.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import DatasetFormatError, UsageError

FORMAT_TAG = "rdp-forge-dataset/1"


class Step(NamedTuple):
    action: Any
    obs: tuple
    reward: Any


class Token(NamedTuple):
    """A letter of the trace alphabet.

    ``category`` is ``"A"``, ``"F1"`` ... ``"Fm"`` or ``"R"``; categories are
    disjoint so a token's role is recoverable from the token alone.
    """

    category: str
    symbol: Any

    def __str__(self):
        return f"{self.category}:{self.symbol}"


def _check_symbols(name, values):
    values = tuple(values)
    if not values:
        raise UsageError(f"{name} must be non-empty")
    if len(set(values)) != len(values):
        raise UsageError(f"{name} contains duplicates: {values!r}")
    return values


@dataclass(frozen=True)
class AlphabetSpec:
    """Factored action / observation / reward alphabet with a horizon.

    The start action ``start_action`` is the dummy ``a⊥`` used at step 0 and
    is kept outside ``actions``.
    """

    actions: tuple
    obs_features: tuple
    rewards: tuple
    horizon: int
    terminal_obs: tuple
    start_action: Any = "start"

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "actions", _check_symbols("actions", self.actions))
        features = tuple(
            _check_symbols(f"obs feature {i + 1}", dom)
            for i, dom in enumerate(self.obs_features)
        )
        if not features:
            raise UsageError("at least one observation feature is required")
        set_(self, "obs_features", features)
        rewards = _check_symbols("rewards", self.rewards)
        for r in rewards:
            if isinstance(r, bool) or not isinstance(r, (int, float)):
                raise UsageError(f"reward {r!r} is not a number")
        set_(self, "rewards", rewards)
        set_(self, "terminal_obs", tuple(self.terminal_obs))
        if int(self.horizon) < 1:
            raise UsageError("horizon must be >= 1")
        set_(self, "horizon", int(self.horizon))
        if len(self.actions) < 2:
            raise UsageError("need at least 2 actions")
        if self.n_obs < 2:
            raise UsageError("need at least 2 observations")
        if len(self.terminal_obs) != self.m:
            raise UsageError("terminal_obs must have one symbol per feature")
        for i, sym in enumerate(self.terminal_obs):
            if sym not in self.obs_features[i]:
                raise UsageError(f"terminal_obs symbol {sym!r} not in feature {i + 1}")
        if self.start_action in self.actions:
            raise UsageError("start_action must not be one of the regular actions")

    # -- sizes ---------------------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.obs_features)

    @property
    def n_slots(self) -> int:
        return self.m + 2

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_rewards(self) -> int:
        return len(self.rewards)

    @cached_property
    def n_obs(self) -> int:
        return int(np.prod([len(d) for d in self.obs_features]))

    @cached_property
    def slot_domains(self) -> tuple:
        """Symbol domain of every slot; the action slot includes the start action."""
        return (self.actions + (self.start_action,),) + self.obs_features + (self.rewards,)

    @cached_property
    def slot_sizes(self) -> np.ndarray:
        return np.array([len(d) for d in self.slot_domains], dtype=np.int64)

    @cached_property
    def token_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.slot_sizes)[:-1]]).astype(np.int64)

    @property
    def n_tokens(self) -> int:
        return int(self.slot_sizes.sum())

    @property
    def categories(self) -> tuple:
        return ("A",) + tuple(f"F{i + 1}" for i in range(self.m)) + ("R",)

    @property
    def start_index(self) -> int:
        return len(self.actions)

    # -- interning -------------------------------------------------------------
    @cached_property
    def _index(self):
        return [{s: i for i, s in enumerate(dom)} for dom in self.slot_domains]

    def symbol_index(self, slot: int, symbol) -> int:
        try:
            return self._index[slot][symbol]
        except (KeyError, TypeError):
            raise UsageError(
                f"symbol {symbol!r} not in domain of {self.categories[slot]}"
            ) from None

    def encode_step(self, step: Step) -> np.ndarray:
        if len(step.obs) != self.m:
            raise UsageError(f"observation {step.obs!r} has wrong arity")
        idx = [self.symbol_index(0, step.action)]
        idx += [self.symbol_index(i + 1, s) for i, s in enumerate(step.obs)]
        idx.append(self.symbol_index(self.m + 1, step.reward))
        return np.array(idx, dtype=np.int32)

    def decode_step(self, codes: Sequence[int]) -> Step:
        doms = self.slot_domains
        obs = tuple(doms[i + 1][int(codes[i + 1])] for i in range(self.m))
        return Step(doms[0][int(codes[0])], obs, doms[-1][int(codes[-1])])

    def obs_index(self, obs_codes: np.ndarray) -> np.ndarray:
        """Mixed-radix index of observation feature codes (last axis)."""
        obs_codes = np.asarray(obs_codes, dtype=np.int64)
        out = np.zeros(obs_codes.shape[:-1], dtype=np.int64)
        for i, dom in enumerate(self.obs_features):
            out = out * len(dom) + obs_codes[..., i]
        return out

    def obs_from_index(self, index: int) -> tuple:
        feats = []
        for dom in reversed(self.obs_features):
            index, r = divmod(int(index), len(dom))
            feats.append(dom[r])
        return tuple(reversed(feats))

    @cached_property
    def terminal_index(self) -> int:
        codes = [self.symbol_index(i + 1, s) for i, s in enumerate(self.terminal_obs)]
        return int(self.obs_index(np.array(codes)))

    def token(self, token_id: int) -> Token:
        slot = int(np.searchsorted(self.token_offsets, token_id, side="right") - 1)
        return Token(self.categories[slot], self.slot_domains[slot][token_id - self.token_offsets[slot]])

    def token_id(self, token: Token) -> int:
        try:
            slot = self.categories.index(token.category)
        except ValueError:
            raise UsageError(f"unknown token category {token.category!r}") from None
        return int(self.token_offsets[slot]) + self.symbol_index(slot, token.symbol)

    # -- episodes --------------------------------------------------------------
    def validate_episode(self, episode: "Episode") -> None:
        H = self.horizon
        if len(episode.steps) != H + 1:
            raise UsageError(f"episode has {len(episode.steps)} steps, expected {H + 1}")
        for t, step in enumerate(episode.steps):
            self.encode_step(step)
            if (t == 0) != (step.action == self.start_action):
                raise UsageError(f"start action misplaced at step {t}")
        if tuple(episode.steps[H].obs) != self.terminal_obs:
            raise UsageError("final step must carry the terminal observation")

    def to_json(self) -> dict:
        return {
            "actions": list(self.actions),
            "obs_features": [list(d) for d in self.obs_features],
            "rewards": list(self.rewards),
            "terminal_obs": list(self.terminal_obs),
            "start_action": self.start_action,
        }

    @classmethod
    def from_json(cls, obj: dict, horizon: int) -> "AlphabetSpec":
        return cls(
            actions=tuple(obj["actions"]),
            obs_features=tuple(tuple(d) for d in obj["obs_features"]),
            rewards=tuple(obj["rewards"]),
            horizon=horizon,
            terminal_obs=tuple(obj["terminal_obs"]),
            start_action=obj.get("start_action", "start"),
        )


@dataclass(frozen=True)
class Episode:
    steps: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "steps", tuple(Step(s[0], tuple(s[1]), s[2]) for s in self.steps)
        )

    @property
    def horizon(self) -> int:
        return len(self.steps) - 1

    def __len__(self):
        return len(self.steps)


def _flatten(step: Step) -> list:
    m = len(step.obs)
    out = [Token("A", step.action)]
    out += [Token(f"F{i + 1}", step.obs[i]) for i in range(m)]
    out.append(Token("R", step.reward))
    return out


def tokenize(episode: Episode, from_t: int, to_t: int) -> list:
    """Flatten steps ``from_t..to_t`` (inclusive) into ``[A][F1]..[Fm][R]`` tokens."""
    H = episode.horizon
    if not (0 <= from_t <= to_t <= H):
        raise UsageError(f"invalid step range [{from_t}, {to_t}] for horizon {H}")
    tokens = []
    for step in episode.steps[from_t : to_t + 1]:
        tokens.extend(_flatten(step))
    return tokens


def suffix_of(episode: Episode, t: int) -> tuple:
    """Steps ``t..H`` of an episode."""
    if not (0 <= t <= episode.horizon):
        raise UsageError(f"suffix start {t} outside [0, {episode.horizon}]")
    return episode.steps[t:]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of equal-length episodes over one alphabet."""

    alphabet: AlphabetSpec
    codes: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.int32)
        a = self.alphabet
        if codes.ndim != 3 or codes.shape[1:] != (a.horizon + 1, a.n_slots):
            raise UsageError(
                f"codes shape {codes.shape} does not match (N, {a.horizon + 1}, {a.n_slots})"
            )
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def from_episodes(cls, alphabet: AlphabetSpec, episodes: Iterable[Episode], metadata=None):
        rows = []
        for k, ep in enumerate(episodes):
            try:
                alphabet.validate_episode(ep)
            except UsageError as exc:
                raise UsageError(f"episode {k}: {exc}") from None
            rows.append(np.stack([alphabet.encode_step(s) for s in ep.steps]))
        codes = np.stack(rows) if rows else np.zeros((0, alphabet.horizon + 1, alphabet.n_slots), np.int32)
        return cls(alphabet, codes, metadata or {})

    def __len__(self):
        return self.codes.shape[0]

    @property
    def horizon(self) -> int:
        return self.alphabet.horizon

    def episode(self, k: int) -> Episode:
        return Episode(tuple(self.alphabet.decode_step(row) for row in self.codes[k]))

    @property
    def episodes(self) -> list:
        return [self.episode(k) for k in range(len(self))]

    def token_ids(self) -> np.ndarray:
        """Global token ids, shape ``(N, H + 1, m + 2)``."""
        return self.codes + self.alphabet.token_offsets.astype(np.int32)

    def obs_indices(self) -> np.ndarray:
        """Observation product-space indices, shape ``(N, H + 1)``."""
        return self.alphabet.obs_index(self.codes[:, :, 1:-1])

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.blake2b(digest_size=12)
        h.update(json.dumps(self.alphabet.to_json(), sort_keys=True).encode())
        h.update(self.codes.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.alphabet == other.alphabet
            and self.metadata == other.metadata
            and np.array_equal(self.codes, other.codes)
        )

    __hash__ = None


def save_dataset(dataset: Dataset, path) -> None:
    a = dataset.alphabet
    header = {
        "format": FORMAT_TAG,
        "alphabet": a.to_json(),
        "H": a.horizon,
        "metadata": dataset.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for k in range(len(dataset)):
            row = []
            for codes in dataset.codes[k]:
                s = a.decode_step(codes)
                row.append({"a": s.action, "o": list(s.obs), "r": s.reward})
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty file", line=1)
    try:
        header = json.loads(lines[0])
        alphabet = AlphabetSpec.from_json(header["alphabet"], int(header["H"]))
    except (json.JSONDecodeError, KeyError, TypeError, UsageError) as exc:
        raise DatasetFormatError(f"bad header: {exc}", line=1) from None
    H = alphabet.horizon
    rows = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        k = len(rows)
        try:
            steps = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"malformed JSON: {exc.msg}", line=lineno) from None
        if not isinstance(steps, list) or len(steps) != H + 1:
            n = len(steps) if isinstance(steps, list) else "?"
            raise DatasetFormatError(
                f"episode {k} has {n} steps, expected {H + 1}", line=lineno
            )
        try:
            ep = Episode(tuple(Step(s["a"], tuple(s["o"]), s["r"]) for s in steps))
            alphabet.validate_episode(ep)
        except (KeyError, TypeError) as exc:
            raise DatasetFormatError(f"episode {k}: malformed step ({exc})", line=lineno) from None
        except UsageError as exc:
            raise DatasetFormatError(f"episode {k}: {exc}", line=lineno) from None
        rows.append(np.stack([alphabet.encode_step(s) for s in ep.steps]))
    codes = np.stack(rows) if rows else np.zeros((0, H + 1, alphabet.n_slots), np.int32)
    return Dataset(alphabet, codes, header.get("metadata", {}))
