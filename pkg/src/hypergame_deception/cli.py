"""Command-line entry point.

``--game`` takes a game JSON file or one of the built-in names
``soccer-basic`` and ``soccer-bouncing``. Every command writes its outputs
and a ``manifest.json`` (parameters plus content hashes) into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detection import DetectorConfig
from .experiments import (sensitivity_sweep, strong_opponent_report, vod_heatmap,
                          write_sensitivity_csv)
from .game import ConfigError, GameError, content_hash, game_to_dict, load_game
from .perception import build_hypergame, bundle_to_dict, load_bundle
from .planner import (build_semi_mdp, build_strong_opponent_mdp, evaluate_policy,
                      policy_from_dict, policy_to_dict, save_semi_mdp, solve_semi_mdp,
                      vod_vector)
from .simulate import OUTCOMES, make_completion, mean_and_half_width, simulate_batch
from .soccer import BASIC, BOUNCING_APPROX, HIDDEN, build_soccer_game

log = logging.getLogger("hypergame_deception")

BUILTIN = {"soccer-basic": BASIC, "soccer-bouncing": BOUNCING_APPROX}


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def add_input(self, path) -> None:
        self.inputs[str(path)] = content_hash(Path(path).read_bytes())

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, name: str) -> None:
        self.outputs[name] = content_hash(self.path(name).read_bytes())

    def write_json(self, name: str, data) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=1)
        self.wrote(name)

    def finish(self, extra: dict | None = None) -> None:
        params = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {"version": __version__, "command": self.args.command, "parameters": params,
                    "inputs": self.inputs, "outputs": self.outputs}
        if extra:
            manifest.update(extra)
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)


def _load(args, run: Run):
    if args.game in BUILTIN:
        game, hidden = build_soccer_game(BUILTIN[args.game])
        run.inputs[args.game] = content_hash(json.dumps(game_to_dict(game)).encode())
    else:
        game = load_game(args.game)
        hidden = frozenset(HIDDEN) if "grid" in game.meta else frozenset()
        run.add_input(args.game)
    if args.visible:
        visible = [a.strip() for a in args.visible.split(",") if a.strip()]
    elif hidden:
        visible = [a for a in game.actions1 if a not in hidden]
    else:
        raise ConfigError("--visible is required for games without a known hidden action set")
    return game, visible


def _bundle(args, run: Run):
    game, visible = _load(args, run)
    if getattr(args, "bundle", None):
        run.add_input(args.bundle)
        return load_bundle(args.bundle, game)
    return build_hypergame(game, visible, args.gamma, args.ne_tol)


def _detector(args, threshold=None) -> DetectorConfig:
    return DetectorConfig(args.cgamma if threshold is None else threshold,
                          args.observation_mode, args.zero_prob_policy)


def _tol(args) -> float:
    if args.tol is not None:
        return args.tol
    return 0.1 if args.scale == 100 else 1e-3


def _labels(game):
    return list(game.states)


def cmd_solve_asw(args) -> int:
    run = Run(args)
    b = _bundle(args, run)
    data = {}
    for name in ("asw1", "asw2", "asw1_p", "asw2_p"):
        r = getattr(b, name)
        data[name] = {"player": r.player, "game": r.game_tag,
                      "states": [b.game.states[i] for i in r.indices()]}
        print(f"{name}: {len(r)} states")
    run.write_json("asw.json", data)
    run.finish()
    return 0


def cmd_solve_ne(args) -> int:
    run = Run(args)
    b = _bundle(args, run)
    run.write_json("bundle.json", bundle_to_dict(b))
    with open(run.path("values.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "label", "eq_value", "u1", "u2"])
        for s in range(b.game.n_states):
            w.writerow([s, b.game.states[s], repr(float(b.eq_value[s])),
                        repr(float(b.u1.values[s])), repr(float(b.u2.values[s]))])
    run.wrote("values.csv")
    s0 = b.game.initial
    print(f"equilibrium value at initial state {b.game.states[s0]}: {b.eq_value[s0]:.6f}")
    run.finish()
    return 0


def cmd_build_semimdp(args) -> int:
    run = Run(args)
    b = _bundle(args, run)
    builder = build_strong_opponent_mdp if args.strong else build_semi_mdp
    mdp = builder(b, _detector(args), args.delta, scale=args.scale)
    name = f"semi_mdp.{args.format}"
    save_semi_mdp(mdp, run.path(name))
    run.wrote(name)
    print(f"decision states: {mdp.n_decision}, nature states: {mdp.n_nature}, "
          f"transitions: {mdp.nature.nnz}")
    run.finish()
    return 0


def _solve(args, run):
    b = _bundle(args, run)
    mdp = build_semi_mdp(b, _detector(args), args.delta, scale=args.scale)
    sol = solve_semi_mdp(mdp, bellman_tol=_tol(args))
    return b, mdp, sol


def _write_vod(run, b, sol, name="vod.csv"):
    vod = vod_vector(sol, b)
    with open(run.path(name), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "label", "planner_value", "eq_value", "vod"])
        for s in np.flatnonzero(~b.decided):
            w.writerow([int(s), b.game.states[s], repr(float(sol.value(s))),
                        repr(float(b.eq_value[s] * sol.mdp.scale)), repr(float(vod[s]))])
    run.wrote(name)
    return vod


def cmd_plan(args) -> int:
    run = Run(args)
    b, mdp, sol = _solve(args, run)
    run.write_json("policy.json", policy_to_dict(sol.policy, mdp, _tol(args)))
    run.write_json("values.json", {"decision_values": [repr(float(v)) for v in sol.values],
                                   "sweeps": len(sol.residuals)})
    vod = _write_vod(run, b, sol)
    print(f"VoD min={np.nanmin(vod):.6g} max={np.nanmax(vod):.6g} "
          f"(scale {args.scale}, {len(sol.residuals)} sweeps)")
    run.finish()
    return 0


def cmd_evaluate(args) -> int:
    run = Run(args)
    b = _bundle(args, run)
    run.add_input(args.policy)
    with open(args.policy) as fh:
        policy = policy_from_dict(json.load(fh))
    mdp = build_semi_mdp(b, _detector(args), args.delta, scale=args.scale)
    values = evaluate_policy(mdp, policy)
    states = np.flatnonzero(~b.decided)
    with open(run.path("evaluation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "label", "value"])
        for s in states:
            w.writerow([int(s), b.game.states[s], repr(float(values[mdp.decision_index(s)]))])
    run.wrote("evaluation.csv")
    run.finish()
    return 0


def cmd_heatmap(args) -> int:
    run = Run(args)
    b, mdp, sol = _solve(args, run)
    for ball in (0, 1):
        hm = vod_heatmap(b, sol, ball)
        name = f"heatmap_ball{ball}.csv"
        hm.write_csv(run.path(name))
        run.wrote(name)
        print(hm.summary())
    vod = vod_vector(sol, b)
    print(f"overall min={np.nanmin(vod):.6g} max={np.nanmax(vod):.6g}")
    run.finish()
    return 0


def cmd_sensitivity(args) -> int:
    run = Run(args)
    b, mdp, sol = _solve(args, run)
    thresholds = [float(x) for x in args.thresholds.split(",")]
    rows = sensitivity_sweep(b, sol.policy, thresholds, args.delta, scale=args.scale,
                             detector_cfg=_detector(args))
    write_sensitivity_csv(rows, run.path("sensitivity.csv"), _labels(b.game))
    run.wrote("sensitivity.csv")
    for r in rows:
        print(f"c={r.threshold:g}: max difference {r.max_difference:.6g} at "
              f"{b.game.states[r.state]} (reference {r.reference_value:.6g}, "
              f"{100 * r.degradation:.3g}%)")
    run.finish()
    return 0


def cmd_strong_opponent(args) -> int:
    run = Run(args)
    b = _bundle(args, run)
    rep = strong_opponent_report(b, args.delta, args.cgamma, scale=args.scale, tol=_tol(args),
                                 detector_cfg=_detector(args))
    rep.write_csv(run.path("strong_opponent.csv"), _labels(b.game))
    run.wrote("strong_opponent.csv")
    d = rep.difference
    print(f"difference min={d.min():.6g} max={d.max():.6g}")
    run.finish()
    return 0


def cmd_simulate(args) -> int:
    run = Run(args)
    b, mdp, sol = _solve(args, run)
    if args.s0 is None:
        s0 = b.game.initial
    else:
        s0 = b.game.state_index(int(args.s0) if args.s0.isdigit() else args.s0)
    comp = make_completion(b, args.fill, args.k2)
    res = simulate_batch(b, sol.policy, comp, _detector(args), s0, args.horizon,
                         args.rollouts, args.seed)
    with open(run.path("rollouts.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rollout", "switch_step", "detection_step", "outcome", "payoff",
                    "continued_outcome", "continued_payoff"])
        for i in range(args.rollouts):
            w.writerow([i, int(res.switch_step[i]), int(res.detection_step[i]),
                        OUTCOMES[res.outcome[i]], repr(float(res.payoff[i])),
                        OUTCOMES[res.continued_outcome[i]], repr(float(res.continued_payoff[i]))])
    run.wrote("rollouts.csv")
    summary = {"state": b.game.states[s0], "planner_value": float(sol.value(s0)) / args.scale,
               "outcomes": res.outcome_counts(), "continued_outcomes": res.outcome_counts(True),
               "false_alarms": res.false_alarms}
    if args.rollouts >= 30:
        for key, arr in (("payoff", res.payoff), ("continued_payoff", res.continued_payoff)):
            est = mean_and_half_width(arr)
            summary[key] = {"mean": est.mean, "half_width": est.half_width}
    run.write_json("summary.json", summary)
    print(json.dumps(summary, indent=1))
    run.finish()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypergame-deception",
                                description="Plan and evaluate action deception in "
                                            "concurrent stochastic games.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--game", default="soccer-basic",
                        help="game JSON file or soccer-basic / soccer-bouncing")
        sp.add_argument("--visible", help="comma-separated actions P2 knows P1 has")
        sp.add_argument("--bundle", help="precomputed hypergame bundle (from solve-ne)")
        sp.add_argument("--gamma", type=float, default=None,
                        help="discount factor (default: the game's)")
        sp.add_argument("--ne-tol", type=float, default=1e-3,
                        help="Shapley iteration tolerance")
        sp.add_argument("--delta", type=float, default=0.2)
        sp.add_argument("--cgamma", type=float, default=2.0, help="detection threshold")
        sp.add_argument("--scale", type=float, choices=(1.0, 100.0), default=1.0)
        sp.add_argument("--tol", type=float, default=None,
                        help="Bellman tolerance (default 1e-3, or 0.1 at scale 100)")
        sp.add_argument("--observation-mode", default="states_only",
                        choices=("states_only", "states_and_p1_actions"))
        sp.add_argument("--zero-prob-policy", default="immediate_detect",
                        choices=("immediate_detect", "clamp"))
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--rollouts", type=int, default=10_000)
        sp.add_argument("--horizon", type=int, default=200)
        sp.add_argument("--out", default="out")

    commands = {
        "solve-asw": (cmd_solve_asw, "almost-sure winning regions"),
        "solve-ne": (cmd_solve_ne, "zero-sum equilibria of the true and perceptual games"),
        "build-semimdp": (cmd_build_semimdp, "write the switching semi-MDP"),
        "plan": (cmd_plan, "optimal one-time switching policy and VoD"),
        "evaluate": (cmd_evaluate, "evaluate a saved policy"),
        "heatmap": (cmd_heatmap, "VoD heatmaps per ball owner"),
        "sensitivity": (cmd_sensitivity, "detection threshold sweep"),
        "strong-opponent": (cmd_strong_opponent, "compare against a zero-delay detector"),
        "simulate": (cmd_simulate, "Monte Carlo rollouts"),
    }
    for name, (func, help_text) in commands.items():
        sp = sub.add_parser(name, help=help_text)
        common(sp)
        sp.set_defaults(func=func)
        if name == "build-semimdp":
            sp.add_argument("--format", choices=("npz", "json"), default="npz")
            sp.add_argument("--strong", action="store_true", help="zero-delay detection variant")
        elif name == "evaluate":
            sp.add_argument("--policy", required=True)
        elif name == "sensitivity":
            sp.add_argument("--thresholds", default="1,5,8,12")
        elif name == "simulate":
            sp.add_argument("--s0", help="initial state label or index (default: game initial)")
            sp.add_argument("--fill", default="keep_perceptual",
                            choices=("keep_perceptual", "uniform_random", "fixed_strategy"))
            sp.add_argument("--k2", type=int, default=3, help="steps until P2 learns the true game")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.scale == 100.0:
        args.scale = 100
    elif args.scale == 1.0:
        args.scale = 1
    try:
        return args.func(args)
    except (GameError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
