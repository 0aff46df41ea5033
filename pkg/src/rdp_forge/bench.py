"""End-to-end pipeline runs and the benchmark table over the five domains."""
from __future__ import annotations

import logging
import multiprocessing as mp
import queue
import time
from dataclasses import asdict, dataclass, field

from .environments import generate_dataset, make_env, uniform_policy
from .exceptions import BudgetExceededError
from .learner import adact_h
from .metrics import TesterConfig
from .planner import estimate_outputs, evaluate_policy, value_iteration

log = logging.getLogger(__name__)

# Dataset sizes are chosen per domain; see the README for why each one.
DOMAIN_DEFAULTS = {
    "corridor": {"params": {"horizon": 5}, "n_episodes": 10_000},
    "tmaze": {"params": {"horizon": 5, "length": 1}, "n_episodes": 30_000},
    "cookie": {"params": {"horizon": 9}, "n_episodes": 5_000_000},
    "cheese": {"params": {"horizon": 6}, "n_episodes": 30_000},
    "minihall": {"params": {"horizon": 15}, "n_episodes": 100_000},
}
DEFAULT_BUDGET_S = 1800.0


@dataclass
class PipelineConfig:
    env: str
    params: dict = field(default_factory=dict)
    n_episodes: int = 10_000
    tester: str = "lang"
    family: tuple = (1, 1, 1)
    delta: float = 0.05
    seed: int = 7
    eval_n: int = 1000
    eval_seed: int = 8

    def tester_config(self) -> TesterConfig:
        return TesterConfig(kind=self.tester, delta=self.delta, family=self.family, seed=self.seed)

    def to_json(self) -> dict:
        out = asdict(self)
        out["family"] = list(self.family)
        return out


def run_pipeline(config: PipelineConfig) -> dict:
    """Generate, learn, plan and evaluate; returns a JSON-ready report."""
    env = make_env(config.env, **config.params)
    data = generate_dataset(env, uniform_policy(env), config.n_episodes, config.seed)
    rdp = adact_h(data, config.delta, config.tester_config())
    policy = value_iteration(rdp, estimate_outputs(rdp, data))
    result = evaluate_policy(env, rdp, policy, config.eval_n, config.eval_seed)
    return {
        "config": config.to_json(),
        "H": env.horizon,
        "Q": rdp.n_states,
        "layer_sizes": rdp.stats["layer_sizes"],
        "r": result.mean,
        "stderr": result.stderr,
        "time": rdp.stats["learn_seconds"],
        "fallback_steps": result.fallback_steps,
        "V0": policy.value,
    }


def _worker(fn, args, out):
    try:
        out.put(("ok", fn(*args)))
    except Exception as exc:  # reported back to the parent
        out.put(("error", f"{type(exc).__name__}: {exc}"))


def run_with_budget(fn, args: tuple, budget_s: float):
    """Run ``fn(*args)`` in a child process and kill it after ``budget_s`` seconds."""
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    out = ctx.Queue()
    proc = ctx.Process(target=_worker, args=(fn, args, out), daemon=True)
    proc.start()
    deadline = time.monotonic() + budget_s
    try:
        status, payload = out.get(timeout=max(budget_s, 0.0))
    except queue.Empty:
        proc.kill()
        proc.join()
        raise BudgetExceededError(f"budget of {budget_s:g} s exceeded") from None
    proc.join(timeout=max(deadline - time.monotonic(), 1.0))
    if status == "error":
        raise RuntimeError(payload)
    return payload


def bench_cell(domain: str, tester: str, budget_s: float = DEFAULT_BUDGET_S, seed: int = 7,
               eval_n: int = 1000, n_episodes=None) -> dict:
    d = DOMAIN_DEFAULTS[domain]
    cfg = PipelineConfig(domain, dict(d["params"]), n_episodes or d["n_episodes"], tester,
                         seed=seed, eval_n=eval_n, eval_seed=seed + 1)
    cell = {"domain": domain, "H": cfg.params["horizon"], "tester": tester, "n_episodes": cfg.n_episodes}
    try:
        report = run_with_budget(run_pipeline, (cfg,), budget_s)
    except BudgetExceededError:
        log.info("%s/%s exceeded the %g s budget", domain, tester, budget_s)
        return {**cell, "status": "budget", "Q": None, "r": None, "stderr": None, "time": None}
    except Exception as exc:
        log.error("%s/%s failed: %s", domain, tester, exc)
        return {**cell, "status": "error", "error": str(exc), "Q": None, "r": None, "stderr": None,
                "time": None}
    return {**cell, "status": "ok", "Q": report["Q"], "r": report["r"], "stderr": report["stderr"],
            "time": report["time"]}


def run_bench(domains=tuple(DOMAIN_DEFAULTS), testers=("cms", "lang"), budget_s: float = DEFAULT_BUDGET_S,
              seed: int = 7, eval_n: int = 1000) -> dict:
    """One cell per (domain, tester), run sequentially; failures do not stop the run."""
    cells = [bench_cell(d, t, budget_s, seed, eval_n) for d in domains for t in testers]
    return {
        "config": {"domains": list(domains), "testers": list(testers), "budget_s": budget_s, "seed": seed,
                   "eval_seed": seed + 1, "eval_n": eval_n,
                   "n_episodes": {d: DOMAIN_DEFAULTS[d]["n_episodes"] for d in domains}},
        "cells": cells,
    }


def _fmt(value, spec: str) -> str:
    return "-" if value is None else format(value, spec)


def to_markdown(table: dict) -> str:
    lines = ["| domain | H | tester | Q | r | time |", "|---|---|---|---|---|---|"]
    for c in table["cells"]:
        r = "-" if c["r"] is None else f"{c['r']:.3f} ± {c['stderr']:.3f}"
        lines.append(f"| {c['domain']} | {c['H']} | {c['tester']} | {_fmt(c['Q'], 'd')} | {r} | "
                     f"{_fmt(c['time'], '.2f')} |")
    return "\n".join(lines) + "\n"
