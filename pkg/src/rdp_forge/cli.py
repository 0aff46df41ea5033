"""``rdp-forge`` command line: gen, learn, eval, bench and lemmas.

Values come from defaults, then an optional ``--config`` JSON file, then
flags, later sources winning.  The effective configuration is echoed into
every JSON artifact.  Exit codes: 0 success, 2 invalid input, 3 runtime
failure, 4 time budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import bench, oracles
from .environments import ENVIRONMENTS, generate_dataset, make_env, uniform_policy
from .exceptions import BudgetExceededError, RdpForgeError, UsageError
from .languages import parse_family_spec
from .learner import LearnedRdp, adact_h, learn_stats
from .metrics import KINDS, TesterConfig
from .planner import estimate_outputs, evaluate_policy, value_iteration
from .trace import load_dataset, save_dataset

log = logging.getLogger("rdp_forge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_BUDGET = 0, 2, 3, 4

DEFAULTS = {
    "gen": {"env": None, "n": 10_000, "horizon": None, "param": {}, "seed": 0, "out": None},
    "learn": {"in": None, "out": None, "tester": "lang", "family": "1,1,1", "delta": 0.05, "store": None,
              "cms_delta_c": None, "cms_epsilon": None, "cms_prune": True, "seed": 0, "budget_s": None},
    "eval": {"in": None, "rdp": None, "env": None, "horizon": None, "param": {}, "eval_n": 1000, "seed": 0,
             "out": None},
    "bench": {"domains": ",".join(bench.DOMAIN_DEFAULTS), "tester": None, "testers": "cms,lang",
              "budget_s": bench.DEFAULT_BUDGET_S, "seed": 7, "eval_n": 1000, "out": None},
    "lemmas": {"seed": 0, "trials": 500, "delta": 0.1, "out": None},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _param(text: str) -> tuple:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.replace("-", "_"), json.loads(value)
    except json.JSONDecodeError:
        return key.replace("-", "_"), value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rdp-forge", description="Learn regular decision processes from offline episodes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON file with option values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)

    def env_flags(sp):
        sp.add_argument("--env", help=f"one of {', '.join(ENVIRONMENTS)}")
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--param", type=_param, action="append", metavar="KEY=VALUE",
                        help="extra environment parameter, e.g. length=3")

    g = sub.add_parser("gen", help="generate an episode dataset")
    common(g)
    env_flags(g)
    g.add_argument("--n", type=int, help="number of episodes")

    lr = sub.add_parser("learn", help="learn an automaton from a dataset")
    common(lr)
    lr.add_argument("--in", dest="in_", type=Path, metavar="PATH", help="dataset file")
    lr.add_argument("--tester", choices=KINDS)
    lr.add_argument("--family", help="language family indices i,j,k")
    lr.add_argument("--delta", type=float)
    lr.add_argument("--store", choices=("exact", "sketch"))
    lr.add_argument("--cms-delta-c", type=float)
    lr.add_argument("--cms-epsilon", type=float)
    lr.add_argument("--no-cms-prune", dest="cms_prune", action="store_const", const=False)
    lr.add_argument("--budget-s", type=float)

    ev = sub.add_parser("eval", help="plan on a learned automaton and evaluate the policy")
    common(ev)
    env_flags(ev)
    ev.add_argument("--in", dest="in_", type=Path, metavar="PATH", help="dataset the automaton was learned from")
    ev.add_argument("--rdp", type=Path, help="learned automaton file")
    ev.add_argument("--eval-n", type=int)

    b = sub.add_parser("bench", help="run the benchmark table")
    common(b)
    b.add_argument("--domains", help="comma-separated domain names")
    b.add_argument("--tester", choices=KINDS, help="run a single tester")
    b.add_argument("--testers", help="comma-separated testers (default cms,lang)")
    b.add_argument("--budget-s", type=float)
    b.add_argument("--eval-n", type=int)

    lm = sub.add_parser("lemmas", help="Monte-Carlo checks of the test guarantees")
    common(lm)
    lm.add_argument("--trials", type=int)
    lm.add_argument("--delta", type=float)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                extra = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
        unknown = set(extra) - set(cfg)
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        cfg.update(extra)
    for key, value in vars(args).items():
        key = "in" if key == "in_" else key
        if key in ("command", "config") or value is None or key not in cfg:
            continue
        if key == "param":
            cfg["param"] = {**cfg["param"], **dict(value)}
        else:
            cfg[key] = value
    return {k: str(v) if isinstance(v, Path) else v for k, v in cfg.items()}


def _require(cfg: dict, *keys) -> None:
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False, default=str)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _env_from(cfg: dict, metadata: dict | None = None):
    name = cfg.get("env") or (metadata or {}).get("generator")
    if name not in ENVIRONMENTS:
        raise UsageError(f"--env: unknown environment {name!r}; choose from {', '.join(ENVIRONMENTS)}")
    params = dict((metadata or {}).get("params", {})) if not cfg.get("env") else {}
    params.update(cfg.get("param") or {})
    if cfg.get("horizon") is not None:
        params["horizon"] = cfg["horizon"]
    return make_env(name, **params)


def _load(path: str):
    if not Path(path).exists():
        raise UsageError(f"--in: no such file {path}")
    return load_dataset(path)


def cmd_gen(cfg: dict) -> int:
    _require(cfg, "env", "out")
    if cfg["n"] < 1:
        raise UsageError("--n must be >= 1")
    env = _env_from(cfg)
    data = generate_dataset(env, uniform_policy(env), cfg["n"], cfg["seed"])
    save_dataset(data, cfg["out"])
    sidecar = {"config": cfg, "metadata": data.metadata, "n_episodes": len(data),
               "fingerprint": data.fingerprint(), "alphabet": data.alphabet.to_json()}
    _write_json(sidecar, cfg["out"] + ".meta.json")
    log.info("wrote %d episodes to %s", len(data), cfg["out"])
    return EXIT_OK


def _learn(data, cfg, tester):
    tests = []
    rdp = adact_h(data, cfg["delta"], tester, tests)
    return rdp, tests


def cmd_learn(cfg: dict) -> int:
    _require(cfg, "in", "out")
    tester = TesterConfig(kind=cfg["tester"], delta=cfg["delta"], family=parse_family_spec(cfg["family"]),
                          store=cfg["store"], cms_delta_c=cfg["cms_delta_c"], cms_epsilon=cfg["cms_epsilon"],
                          cms_prune=cfg["cms_prune"], seed=cfg["seed"])
    data = _load(cfg["in"])
    if cfg["budget_s"] is not None:
        rdp, tests = bench.run_with_budget(_learn, (data, cfg, tester), cfg["budget_s"])
    else:
        rdp, tests = _learn(data, cfg, tester)
    rdp.save(cfg["out"])
    _write_json({"config": cfg, **learn_stats(rdp)}, cfg["out"] + ".stats.json")
    with open(cfg["out"] + ".tests.jsonl", "w", encoding="utf-8") as fh:
        for rec in tests:
            fh.write(json.dumps(rec, default=float) + "\n")
    log.info("learned %d states in %.2f s", rdp.n_states, rdp.stats["learn_seconds"])
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "in", "rdp")
    data = _load(cfg["in"])
    if not Path(cfg["rdp"]).exists():
        raise UsageError(f"--rdp: no such file {cfg['rdp']}")
    rdp = LearnedRdp.load(cfg["rdp"])
    env = _env_from(cfg, data.metadata)
    policy = value_iteration(rdp, estimate_outputs(rdp, data))
    res = evaluate_policy(env, rdp, policy, cfg["eval_n"], cfg["seed"])
    _write_json({
        "config": cfg,
        "Q": rdp.n_states,
        "mean_return": res.mean,
        "stderr": res.stderr,
        "learn_seconds": rdp.stats.get("learn_seconds"),
        "fallback_steps": res.fallback_steps,
        "fallback_episodes": res.fallback_episodes,
        "V0": policy.value,
        "policy": policy.to_json()["actions"],
    }, cfg["out"])
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    domains = [d for d in cfg["domains"].split(",") if d]
    testers = [cfg["tester"]] if cfg["tester"] else [t for t in cfg["testers"].split(",") if t]
    for d in domains:
        if d not in bench.DOMAIN_DEFAULTS:
            raise UsageError(f"--domains: unknown domain {d!r}")
    for t in testers:
        if t not in KINDS:
            raise UsageError(f"--testers: unknown tester {t!r}")
    started = time.perf_counter()
    table = bench.run_bench(domains, testers, cfg["budget_s"], cfg["seed"], cfg["eval_n"])
    table["config"]["cli"] = cfg
    table["wall_seconds"] = time.perf_counter() - started
    md = bench.to_markdown(table)
    if cfg["out"] is None:
        print(md, end="")
    else:
        _write_json(table, cfg["out"])
        Path(cfg["out"]).with_suffix(".md").write_text(md, encoding="utf-8")
    return EXIT_OK


def cmd_lemmas(cfg: dict) -> int:
    report = oracles.run_lemma_checks(cfg["seed"], cfg["trials"], cfg["delta"])
    report["cms_streams"] = oracles.cms_stream_trials(seed=cfg["seed"])
    report["config"] = cfg
    _write_json(report, cfg["out"])
    return EXIT_OK if report["passed"] and report["cms_streams"]["passed"] else EXIT_RUNTIME


COMMANDS = {"gen": cmd_gen, "learn": cmd_learn, "eval": cmd_eval, "bench": cmd_bench, "lemmas": cmd_lemmas}


def main(argv=None) -> int:
    level = os.environ.get("RDP_FORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](resolve_config(args))
    except BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, FileNotFoundError) as exc:
        # UsageError, ConfigurationError and the other validation errors are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RdpForgeError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
