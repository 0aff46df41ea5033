"""Brute-force checks that special language families reduce to classic distances."""
import itertools
from functools import reduce

import numpy as np

from rdp_forge.languages import Concat, LanguageFamily, StepAtom, union
from rdp_forge.metrics import ExactStore, lang_metric, prefix_linf
from rdp_forge.trace import AlphabetSpec

ALPHABETS = {
    "two": AlphabetSpec(("a", "b"), (("x", "y"),), (0,), 2, ("y",)),
    "three": AlphabetSpec(("a", "b", "c"), (("x", "y", "z"),), (0,), 2, ("z",)),
}


def step_space(alphabet):
    return list(itertools.product(alphabet.actions, alphabet.obs_features[0], alphabet.rewards))


def strings(alphabet, n_steps):
    return list(itertools.product(step_space(alphabet), repeat=n_steps))


def _atoms(x):
    return tuple(StepAtom(s) for s in x)


def singleton_family(alphabet, n_steps):
    ell = n_steps * alphabet.n_slots
    return [Concat((False,) * (n_steps + 1), _atoms(x), ell) for x in strings(alphabet, n_steps)]


def powerset_family(alphabet, n_steps):
    singles = singleton_family(alphabet, n_steps)
    return [reduce(union, combo) for r in range(1, len(singles) + 1)
            for combo in itertools.combinations(singles, r)]


def prefix_family(alphabet, n_steps):
    ell = n_steps * alphabet.n_slots
    return [Concat((False,) * t + (True,), _atoms(x), ell)
            for t in range(1, n_steps + 1) for x in strings(alphabet, t)]


def stores(alphabet, n_steps, p, q):
    codes = np.array([[[alphabet.symbol_index(i, v) for i, v in enumerate(s)] for s in x]
                      for x in strings(alphabet, n_steps)])
    t = alphabet.horizon - n_steps + 1
    return ExactStore(alphabet, t, codes, p), ExactStore(alphabet, t, codes, q)


def prefix_linf_oracle(p, q, n_strings_per_step, n_steps):
    """Maximum over prefixes, with probability vectors indexed in lexicographic string order."""
    k = n_strings_per_step
    best = 0.0
    for t in range(1, n_steps + 1):
        block = k ** (n_steps - t)
        pp = p.reshape(-1, block).sum(axis=1)
        qq = q.reshape(-1, block).sum(axis=1)
        best = max(best, float(np.abs(pp - qq).max()))
    return best


def random_pair(rng, size):
    p = rng.dirichlet(np.full(size, 0.5))
    q = rng.dirichlet(np.full(size, 0.5))
    p[rng.random(size) < 0.2] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    return p / p.sum(), q


def check_reductions(seed: int = 0, pairs: int = 3, powerset_max_strings: int = 16) -> dict:
    """Largest absolute error of each identity over alphabets, lengths and random pairs."""
    rng = np.random.default_rng(seed)
    errors = {"singleton_linf": 0.0, "powerset_tv": 0.0, "prefix_linfp": 0.0, "prefix_store": 0.0}
    for alphabet in ALPHABETS.values():
        k = len(step_space(alphabet))
        for n_steps in (1, 2):
            size = k ** n_steps
            fams = {"singleton_linf": singleton_family(alphabet, n_steps),
                    "prefix_linfp": prefix_family(alphabet, n_steps)}
            if size <= powerset_max_strings:
                fams["powerset_tv"] = powerset_family(alphabet, n_steps)
            ell = n_steps * alphabet.n_slots
            for _ in range(pairs):
                p, q = random_pair(rng, size)
                z1, z2 = stores(alphabet, n_steps, p, q)
                truth = {"singleton_linf": float(np.abs(p - q).max()),
                         "powerset_tv": 0.5 * float(np.abs(p - q).sum()),
                         "prefix_linfp": prefix_linf_oracle(p, q, k, n_steps)}
                for name, fam in fams.items():
                    got = lang_metric(LanguageFamily(tuple(fam), (0, 0, 0), ell), z1, z2)
                    errors[name] = max(errors[name], abs(got - truth[name]))
                errors["prefix_store"] = max(errors["prefix_store"],
                                             abs(prefix_linf(z1, z2) - truth["prefix_linfp"]))
    return errors
