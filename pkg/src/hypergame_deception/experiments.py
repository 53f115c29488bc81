"""Experiment tables: VoD heatmaps, strong-opponent gap, threshold sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .detection import DetectorConfig
from .perception import HypergameBundle
from .planner import (SemiMDPSolution, SwitchPolicy, build_semi_mdp, build_strong_opponent_mdp,
                      evaluate_policy, solve_semi_mdp, vod_vector)
from .soccer import layout_of


@dataclass
class Heatmap:
    """VoD per (P1 cell, P2 cell) for one ball owner; NaN where undefined."""

    ball: int
    cells: list[tuple[int, int]]
    values: np.ndarray

    @property
    def minimum(self) -> float:
        return float(np.nanmin(self.values))

    @property
    def maximum(self) -> float:
        return float(np.nanmax(self.values))

    def summary(self) -> str:
        return f"ball={self.ball} min={self.minimum:.6g} max={self.maximum:.6g}"

    def write_csv(self, path) -> None:
        labels = [f"{r}_{c}" for r, c in self.cells]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p1\\p2"] + labels)
            for lab, row in zip(labels, self.values):
                w.writerow([lab] + ["" if np.isnan(x) else repr(float(x)) for x in row])


def vod_heatmap(bundle: HypergameBundle, solution: SemiMDPSolution, ball: int) -> Heatmap:
    """Tabulate VoD over player positions for the given ball owner (1 = P1)."""
    layout = layout_of(bundle.game)
    vod = vod_vector(solution, bundle)
    nc = len(layout.cells)
    grid = np.full((nc, nc), np.nan)
    for i1 in range(nc):
        for i2 in range(nc):
            grid[i1, i2] = vod[(i1 * nc + i2) * 2 + ball]
    return Heatmap(ball, list(layout.cells), grid)


@dataclass
class StrongOpponentReport:
    states: np.ndarray
    realistic: np.ndarray
    strong: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return self.realistic - self.strong

    def write_csv(self, path, labels=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "label", "u_sw", "u_so", "difference"])
            for k, s in enumerate(self.states):
                lab = labels[s] if labels is not None else ""
                w.writerow([int(s), lab, repr(float(self.realistic[k])),
                            repr(float(self.strong[k])), repr(float(self.difference[k]))])


def strong_opponent_report(bundle: HypergameBundle, delta: float = 0.2, threshold: float = 2.0,
                           *, scale: float = 1.0, tol: float | None = None,
                           detector_cfg: DetectorConfig | None = None) -> StrongOpponentReport:
    """Value of the realistic-opponent policy minus the strong-opponent policy.

    Both policies are evaluated in the realistic semi-MDP by fixed-count
    sweeps, so the two values agree bit for bit wherever the policies
    induce the same reachable behaviour.
    """
    cfg = replace(detector_cfg or DetectorConfig(), threshold=threshold)
    mdp = build_semi_mdp(bundle, cfg, delta, scale=scale)
    strong = build_strong_opponent_mdp(bundle, cfg, delta, scale=scale)
    pi_sw = solve_semi_mdp(mdp, bellman_tol=tol).policy
    pi_so = solve_semi_mdp(strong, bellman_tol=tol).policy
    v_sw = evaluate_policy(mdp, pi_sw, "iterative")
    v_so = evaluate_policy(mdp, pi_so, "iterative")
    states = np.flatnonzero(~bundle.decided)
    d0 = mdp.decision_index(states)
    return StrongOpponentReport(states, v_sw[d0], v_so[d0])


@dataclass
class SensitivityRow:
    threshold: float
    max_difference: float
    state: int
    reference_value: float

    @property
    def degradation(self) -> float:
        """Difference relative to the reference value at the maximizing state."""
        if self.reference_value == 0:
            return 0.0 if self.max_difference == 0 else np.inf
        return self.max_difference / abs(self.reference_value)


def sensitivity_sweep(bundle: HypergameBundle, base_policy: SwitchPolicy, thresholds,
                      delta: float = 0.2, *, scale: float = 1.0,
                      detector_cfg: DetectorConfig | None = None) -> list[SensitivityRow]:
    """Evaluate a policy planned for one threshold in semi-MDPs for others.

    For each threshold the row holds the largest drop, over initial states,
    from the value in the reference semi-MDP to the value in the new one.
    """
    base_cfg = replace(detector_cfg or DetectorConfig(), threshold=base_policy.threshold)
    ref_mdp = build_semi_mdp(bundle, base_cfg, base_policy.delta, scale=scale)
    states = np.flatnonzero(~bundle.decided)
    ref = evaluate_policy(ref_mdp, base_policy)[ref_mdp.decision_index(states)]
    rows = []
    for c in thresholds:
        mdp = build_semi_mdp(bundle, replace(base_cfg, threshold=float(c)), delta, scale=scale)
        vals = evaluate_policy(mdp, base_policy.remap(mdp))[mdp.decision_index(states)]
        diff = ref - vals
        k = int(np.argmax(diff))
        rows.append(SensitivityRow(float(c), float(diff[k]), int(states[k]), float(ref[k])))
    return rows


def write_sensitivity_csv(rows: list[SensitivityRow], path, labels=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "max_difference", "state", "label", "reference_value",
                    "degradation"])
        for r in rows:
            lab = labels[r.state] if labels is not None else ""
            w.writerow([repr(r.threshold), repr(r.max_difference), r.state, lab,
                        repr(r.reference_value), repr(float(r.degradation))])
