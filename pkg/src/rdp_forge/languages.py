"""Trace languages: step patterns, gap concatenations and Boolean combinations.

Nodes are immutable and canonicalised on construction so that structural
deduplication is plain set membership:

* :class:`StepAtom` -- one step whose slots are each ``None`` (any symbol)
  or a fixed symbol.
* :class:`Union` / :class:`Intersection` -- binary, operands sorted, with
  ``X | X == X`` and ``X & X == X``.
* :class:`Concat` -- ``S1 G1 S2 ... Gk S(k+1)`` restricted to ``ell`` tokens,
  each separator a gap (any token string) or empty.

Two evaluators are provided.  :func:`contains` simulates the pattern over an
explicit token string and is the reference.  :func:`membership_matrix`
evaluates a whole family over a batch of step-aligned suffix codes at once
and is what the learner uses.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .exceptions import FamilySizeError, UndefinedEstimateError, UsageError
from .trace import AlphabetSpec, Token

DEFAULT_MAX_FAMILY = 10**6


def _slot_category(slot: int, n_slots: int) -> str:
    if slot == 0:
        return "A"
    if slot == n_slots - 1:
        return "R"
    return f"F{slot}"


class LangNode:
    """Base class; subclasses are frozen dataclasses."""

    @property
    def length(self) -> int:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def single_step(self) -> bool:
        return not isinstance(self, Concat) and not self._has_concat

    def __str__(self):
        return self.pretty


@dataclass(frozen=True)
class StepAtom(LangNode):
    slots: tuple

    _has_concat = False

    @property
    def length(self) -> int:
        return len(self.slots)

    @cached_property
    def key(self) -> str:
        return "[" + "|".join("." if s is None else repr(s) for s in self.slots) + "]"

    @cached_property
    def pretty(self) -> str:
        return "[" + "|".join("·" if s is None else str(s) for s in self.slots) + "]"

    def constrained(self) -> list:
        return [(i, s) for i, s in enumerate(self.slots) if s is not None]


@dataclass(frozen=True)
class _Binary(LangNode):
    left: LangNode
    right: LangNode

    @property
    def length(self) -> int:
        return self.left.length

    @property
    def _has_concat(self):
        return not (self.left.single_step and self.right.single_step)

    @cached_property
    def key(self) -> str:
        return f"({self.left.key}{self._op}{self.right.key})"

    @cached_property
    def pretty(self) -> str:
        return f"({self.left.pretty} {self._sym} {self.right.pretty})"


@dataclass(frozen=True)
class Union(_Binary):
    _op = "|"
    _sym = "∪"


@dataclass(frozen=True)
class Intersection(_Binary):
    _op = "&"
    _sym = "∩"


@dataclass(frozen=True)
class Concat(LangNode):
    """``gaps[i]`` is True when separator ``S(i+1)`` is a gap; ``len(gaps) == k + 1``."""

    gaps: tuple
    elems: tuple
    ell: int

    _has_concat = True

    def __post_init__(self):
        if len(self.gaps) != len(self.elems) + 1 or not self.elems:
            raise UsageError("Concat needs k >= 1 elements and k + 1 separators")
        for e in self.elems:
            if not e.single_step:
                raise UsageError("Concat elements must be single-step languages")

    @property
    def length(self) -> int:
        return self.ell

    @property
    def k(self) -> int:
        return len(self.elems)

    @cached_property
    def key(self) -> str:
        parts = []
        for gap, elem in zip(self.gaps, self.elems + (None,)):
            parts.append("*" if gap else "")
            if elem is not None:
                parts.append(elem.key)
        return "".join(parts) + f"@{self.ell}"

    @cached_property
    def pretty(self) -> str:
        parts = []
        for gap, elem in zip(self.gaps, self.elems + (None,)):
            if gap:
                parts.append("*")
            if elem is not None:
                parts.append(elem.pretty)
        return " ".join(parts)

    def feasible(self) -> bool:
        """Whether some token string of length ``ell`` can match (length arithmetic only)."""
        need = sum(e.length for e in self.elems)
        return need <= self.ell if any(self.gaps) else need == self.ell


def union(a: LangNode, b: LangNode) -> LangNode:
    if a == b:
        return a
    if a.length != b.length:
        raise UsageError("cannot combine languages of different lengths")
    return Union(*sorted((a, b), key=lambda n: n.key))


def intersection(a: LangNode, b: LangNode) -> LangNode:
    if a == b:
        return a
    if a.length != b.length:
        raise UsageError("cannot combine languages of different lengths")
    return Intersection(*sorted((a, b), key=lambda n: n.key))


@dataclass(frozen=True)
class LanguageFamily:
    languages: tuple
    indices: tuple
    ell: int

    def __len__(self):
        return len(self.languages)

    def __iter__(self):
        return iter(self.languages)

    def __contains__(self, node):
        return node in self._set

    @cached_property
    def _set(self):
        return frozenset(self.languages)

    def describe(self) -> str:
        i, j, k = self.indices
        lines = [f"X_{{{i},{j},{k}}} ell={self.ell} |X|={len(self)}"]
        lines += ["  " + node.pretty for node in self.languages]
        return "\n".join(lines)


# -- construction --------------------------------------------------------------


def base_patterns(alphabet: AlphabetSpec) -> list:
    """Single-component step patterns: one per action, reward and feature value."""
    n = alphabet.n_slots
    atoms = []

    def atom(slot, sym):
        slots = [None] * n
        slots[slot] = sym
        return StepAtom(tuple(slots))

    atoms += [atom(0, a) for a in alphabet.actions]
    atoms += [atom(n - 1, r) for r in alphabet.rewards]
    for i, dom in enumerate(alphabet.obs_features):
        atoms += [atom(i + 1, o) for o in dom]
    return list(dict.fromkeys(atoms))


def boolean_close(family: Sequence[LangNode]) -> list:
    """``X ∪ B(X)``: the inputs plus every pairwise union and intersection."""
    family = list(dict.fromkeys(family))
    out = dict.fromkeys(family)
    for a, b in itertools.combinations(family, 2):
        out.setdefault(union(a, b))
        out.setdefault(intersection(a, b))
    return list(out)


def concat_family(base: Sequence[LangNode], k: int, ell: int) -> list:
    """All ``S1 G1 ... Gk S(k+1)`` over ``base`` with gap/empty separators."""
    if k < 1 or ell < 0:
        raise UsageError("need k >= 1 and ell >= 0")
    out = {}
    for elems in itertools.product(base, repeat=k):
        for gaps in itertools.product((True, False), repeat=k + 1):
            out.setdefault(Concat(gaps, elems, ell))
    return list(out)


def _check_size(n: int, cap: int, which: str, value: int) -> None:
    if n > cap:
        raise FamilySizeError(
            f"family size {n} exceeds cap {cap} at index {which}={value}"
        )


def pattern_set(alphabet: AlphabetSpec, i: int, cap: int = DEFAULT_MAX_FAMILY) -> list:
    """``G_i`` with ``G_i = G_(i-1) ∪ B(G_(i-1))``."""
    if not 1 <= i <= alphabet.m + 2:
        raise UsageError(f"pattern level i={i} outside [1, {alphabet.m + 2}]")
    g = base_patterns(alphabet)
    for level in range(2, i + 1):
        _check_size(len(g) + len(g) * (len(g) - 1), cap, "i", level)
        g = boolean_close(g)
    return g


def build_family(
    alphabet: AlphabetSpec,
    i: int,
    j: int,
    k: int,
    ell: int,
    max_size: int = DEFAULT_MAX_FAMILY,
    drop_infeasible: bool = True,
) -> LanguageFamily:
    """The family ``X_{i,j,k}`` of languages over token strings of length ``ell``.

    ``drop_infeasible`` removes concatenations whose length arithmetic makes
    them empty; they have probability zero under every distribution.
    """
    if j < 1 or k < 1:
        raise UsageError("family indices j and k must be >= 1")
    if ell < 1:
        raise UsageError("language length ell must be >= 1")
    g = pattern_set(alphabet, i, max_size)
    fam: dict = {}
    for jj in range(1, j + 1):
        _check_size(len(fam) + len(g) ** jj * 2 ** (jj + 1), max_size, "j", jj)
        for node in concat_family(g, jj, ell):
            if not drop_infeasible or node.feasible():
                fam.setdefault(node)
    langs = list(fam)
    for kk in range(2, k + 1):
        _check_size(len(langs) ** 2, max_size, "k", kk)
        langs = boolean_close(langs)
    _check_size(len(langs), max_size, "k", k)
    if not langs:
        raise UsageError(f"family X_{{{i},{j},{k}}} is empty for ell={ell}")
    return LanguageFamily(tuple(langs), (i, j, k), ell)


def parse_family_spec(text: str) -> tuple:
    try:
        parts = tuple(int(p) for p in str(text).split(","))
    except ValueError:
        raise UsageError(f"family spec must look like 'i,j,k', got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise UsageError(f"family spec must be three positive integers, got {text!r}")
    return parts


# -- reference matcher -----------------------------------------------------------


def _match_step(node: LangNode, window: Sequence[Token]) -> bool:
    if isinstance(node, StepAtom):
        n = len(node.slots)
        if len(window) != n:
            return False
        for s, (tok, want) in enumerate(zip(window, node.slots)):
            if tok[0] != _slot_category(s, n):
                return False
            if want is not None and tok[1] != want:
                return False
        return True
    if isinstance(node, Union):
        return _match_step(node.left, window) or _match_step(node.right, window)
    if isinstance(node, Intersection):
        return _match_step(node.left, window) and _match_step(node.right, window)
    raise UsageError(f"not a single-step language: {node!r}")


def _match_concat(node: Concat, tokens: Sequence[Token]) -> bool:
    ell, k = len(tokens), node.k
    # reach[p] = set of c such that S1 G1 .. S_c G_c (then inside S_{c+1}) covers tokens[:p]
    reach = [set() for _ in range(ell + 1)]
    reach[0].add(0)
    for p in range(ell + 1):
        for c in sorted(reach[p]):
            if node.gaps[c] and p < ell:
                reach[p + 1].add(c)
            if c < k:
                elem = node.elems[c]
                q = p + elem.length
                if q <= ell and _match_step(elem, tokens[p:q]):
                    reach[q].add(c + 1)
    return k in reach[ell]


def _contains(node: LangNode, tokens: Sequence[Token]) -> bool:
    if isinstance(node, Concat):
        return _match_concat(node, tokens)
    if isinstance(node, Union):
        return _contains(node.left, tokens) or _contains(node.right, tokens)
    if isinstance(node, Intersection):
        return _contains(node.left, tokens) and _contains(node.right, tokens)
    return _match_step(node, tokens)


def contains(lang: LangNode, tokens: Sequence[Token]) -> bool:
    """Membership of an explicit token string in ``lang``."""
    tokens = list(tokens)
    if len(tokens) != lang.length:
        raise UsageError(f"trace has {len(tokens)} tokens, language length is {lang.length}")
    return _contains(lang, tokens)


def estimate_prob(lang: LangNode, suffixes: Sequence[Sequence[Token]]) -> float:
    """Fraction of the traces in ``suffixes`` that belong to ``lang``."""
    suffixes = list(suffixes)
    if not suffixes:
        raise UndefinedEstimateError("cannot estimate a probability from an empty multiset")
    lengths = {len(s) for s in suffixes}
    if len(lengths) != 1:
        raise UsageError("all traces must have the same length")
    return sum(contains(lang, s) for s in suffixes) / len(suffixes)


# -- batch evaluator -------------------------------------------------------------


class _BatchEvaluator:
    """Evaluates nodes over suffix codes ``(n, L, m + 2)`` of local symbol indices."""

    def __init__(self, alphabet: AlphabetSpec, codes: np.ndarray):
        self.alphabet = alphabet
        self.codes = codes
        self._steps: dict = {}
        self._members: dict = {}

    def step_match(self, node: LangNode) -> np.ndarray:
        hit = self._steps.get(node)
        if hit is not None:
            return hit
        if isinstance(node, StepAtom):
            hit = np.ones(self.codes.shape[:2], dtype=bool)
            for slot, sym in node.constrained():
                try:
                    idx = self.alphabet.symbol_index(slot, sym)
                except UsageError:
                    hit = np.zeros(self.codes.shape[:2], dtype=bool)
                    break
                hit &= self.codes[:, :, slot] == idx
        elif isinstance(node, Union):
            hit = self.step_match(node.left) | self.step_match(node.right)
        elif isinstance(node, Intersection):
            hit = self.step_match(node.left) & self.step_match(node.right)
        else:
            raise UsageError(f"not a single-step language: {node!r}")
        self._steps[node] = hit
        return hit

    def member(self, node: LangNode) -> np.ndarray:
        hit = self._members.get(node)
        if hit is None:
            hit = self._members[node] = self._member(node)
        return hit

    def _member(self, node: LangNode) -> np.ndarray:
        n, L = self.codes.shape[:2]
        if isinstance(node, Concat):
            k = node.k
            step_len = self.alphabet.n_slots
            if node.ell != L * step_len:
                raise UsageError(f"language length {node.ell} != trace length {L * step_len}")
            matches = [self.step_match(e) for e in node.elems]
            cur = np.zeros((n, k + 1), dtype=bool)
            cur[:, 0] = True
            for s in range(L):
                nxt = np.zeros_like(cur)
                for c in range(k + 1):
                    if node.gaps[c]:
                        nxt[:, c] |= cur[:, c]
                    if c < k:
                        nxt[:, c + 1] |= cur[:, c] & matches[c][:, s]
                cur = nxt
            return cur[:, k]
        if isinstance(node, Union):
            return self.member(node.left) | self.member(node.right)
        if isinstance(node, Intersection):
            return self.member(node.left) & self.member(node.right)
        if L != 1:
            raise UsageError("single-step language applied to a multi-step trace")
        return self.step_match(node)[:, 0]


def membership_matrix(alphabet: AlphabetSpec, languages: Sequence[LangNode], codes: np.ndarray) -> np.ndarray:
    """Boolean ``(n, |X|)`` matrix: trace ``r`` (step codes) belongs to language ``c``."""
    codes = np.asarray(codes)
    if codes.ndim != 3 or codes.shape[2] != alphabet.n_slots:
        raise UsageError("codes must have shape (n, L, m + 2)")
    ev = _BatchEvaluator(alphabet, codes)
    out = np.empty((codes.shape[0], len(languages)), dtype=bool)
    for c, node in enumerate(languages):
        out[:, c] = ev.member(node)
    return out
