"""Rollout simulator for one-time switching play against a BSR opponent.

Every rollout carries two payoffs:

* ``payoff`` mirrors the semi-MDP accounting: +-gamma^T when an
  almost-sure winning region is entered at step T, and
  ``eq_value(s_N) * gamma^N`` when P2 detects the switch at step N, which
  ends the rollout's accounting there;
* ``continued_payoff`` keeps playing after detection. P2 moves through the
  undefined window (filled by the completion) into her true-game strategy,
  P1 keeps his true-game strategy, and the payoff is +-gamma^T at the first
  region entry (0 if the horizon is hit first). This is P1's realized
  utility against that completion.

Both use the same random draws, so they coincide on rollouts without a
detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detection import DetectorConfig, build_hypotheses, check_stop, llr_table
from .game import ConfigError, Play
from .perception import (PERCEPTUAL, TRUE, WINDOW, BSRCompletion, BSRModel, DeceptionTimeline,
                         Fill, HypergameBundle, perceptual_p1, true_p1)
from .planner import SWITCH, SwitchPolicy

REACHED_ASW1, REACHED_ASW2, DETECTED, HORIZON = "reached_asw1", "reached_asw2", "detected", "horizon"
OUTCOMES = (REACHED_ASW1, REACHED_ASW2, DETECTED, HORIZON)
_CODE = {name: i for i, name in enumerate(OUTCOMES)}


@dataclass
class ScenarioConfig:
    gamma: float = 0.95
    delta: float = 0.2
    threshold: float = 2.0
    observation_mode: str = "states_only"
    zero_prob_policy: str = "immediate_detect"
    fill: str = "keep_perceptual"
    k2: int = 3
    horizon: int = 200
    rollouts: int = 10_000
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.rollouts < 1:
            raise ConfigError("need at least one rollout")
        if self.k2 < 0:
            raise ConfigError("k2 must be non-negative")

    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.threshold, self.observation_mode, self.zero_prob_policy)


@dataclass
class RolloutRecord:
    play: Play
    phi: list[float]
    switch_step: int | None
    detection_step: int | None
    outcome: str
    payoff: float
    continued_outcome: str
    continued_payoff: float
    false_alarm: bool = False


@dataclass
class BatchResult:
    payoff: np.ndarray
    continued_payoff: np.ndarray
    outcome: np.ndarray  # codes into OUTCOMES
    continued_outcome: np.ndarray
    switch_step: np.ndarray  # -1 if never
    detection_step: np.ndarray  # -1 if never
    false_alarms: int = 0
    plays: list[Play] = field(default_factory=list)
    phi_traces: list[list[float]] = field(default_factory=list)

    def outcome_counts(self, continued: bool = False) -> dict[str, int]:
        codes = self.continued_outcome if continued else self.outcome
        return {name: int(np.sum(codes == i)) for i, name in enumerate(OUTCOMES)}


class _Sampler:
    """Pre-tabulated successor lists for fast batched transitions."""

    def __init__(self, kernel):
        S, A1, A2, _ = kernel.shape
        counts = (kernel > 0).sum(axis=3)
        K = max(int(counts.max()), 1)
        self.succ = np.zeros((S, A1, A2, K), dtype=np.int64)
        self.cum = np.ones((S, A1, A2, K))
        for s, a, b in zip(*np.nonzero(counts)):
            nz = np.flatnonzero(kernel[s, a, b] > 0)
            self.succ[s, a, b, :nz.size] = nz
            self.succ[s, a, b, nz.size:] = nz[-1]
            c = np.cumsum(kernel[s, a, b, nz])
            c[-1] = 1.0
            self.cum[s, a, b, :nz.size] = c

    def draw(self, s, a, b, u):
        k = (u[:, None] >= self.cum[s, a, b]).sum(axis=1)
        k = np.minimum(k, self.succ.shape[3] - 1)
        return self.succ[s, a, b, k]


def _categorical(table, s, u):
    cum = np.cumsum(table[s], axis=1)
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, table.shape[1] - 1)


def simulate_batch(bundle: HypergameBundle, policy: SwitchPolicy, completion: BSRCompletion,
                   detector_cfg: DetectorConfig, s0: int, horizon: int, n: int,
                   seed: int | np.random.Generator, *, record: bool = False) -> BatchResult:
    """Simulate ``n`` independent rollouts from ``s0`` in lock step."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    game = bundle.game
    gamma = bundle.gamma
    k2 = completion.model.timeline.k2
    sampler = _Sampler(game.kernel)
    tables = completion.phase_tables()
    p1_keep, p1_switch = perceptual_p1(bundle), true_p1(bundle)
    mc0, mc1 = build_hypotheses(bundle, detector_cfg.observation_mode)
    llr = llr_table(mc0, mc1, detector_cfg.zero_prob_policy, detector_cfg.clamp_eps)
    with_actions = detector_cfg.observation_mode != "states_only"
    asw1, asw2 = bundle.asw1.members, bundle.asw2.members
    eq = bundle.eq_value
    L = policy.L
    keep_at = policy.actions[0::2 * L] != SWITCH  # (s, level 1, flag 0)

    s = np.full(n, int(s0), dtype=np.int64)
    flag = np.zeros(n, dtype=bool)
    phi = np.zeros(n)
    switch_step = np.full(n, -1, dtype=np.int64)
    det_step = np.full(n, -1, dtype=np.int64)
    payoff = np.zeros(n)
    cont = np.zeros(n)
    outcome = np.full(n, _CODE[HORIZON], dtype=np.int8)
    cont_outcome = np.full(n, _CODE[HORIZON], dtype=np.int8)
    settled = np.zeros(n, dtype=bool)  # semi-MDP accounting finished
    alive = np.ones(n, dtype=bool)  # continued play still running
    plays = [Play([int(s0)]) for _ in range(n)] if record else []
    traces = [[] for _ in range(n)] if record else []

    def resolve_regions(t):
        disc = gamma ** t
        for region, sign, code in ((asw1, 1.0, REACHED_ASW1), (asw2, -1.0, REACHED_ASW2)):
            hit = alive & region[s]
            fresh = hit & ~settled
            payoff[fresh] = sign * disc
            outcome[fresh] = _CODE[code]
            settled[fresh] = True
            cont[hit] = sign * disc
            cont_outcome[hit] = _CODE[code]
            alive[hit] = False

    resolve_regions(0)
    for t in range(horizon):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        st = s[idx]
        # P1's macro decision is only live before the switch
        newly = ~flag[idx] & ~keep_at[st]
        flag[idx[newly]] = True
        switch_step[idx[newly]] = t
        u = rng.random((3, idx.size))
        a = np.where(flag[idx], _categorical(p1_switch, st, u[0]), _categorical(p1_keep, st, u[0]))
        # P2's phase: detection at step N keeps the perceptual move at N
        d = det_step[idx]
        phase_window = (d >= 0) & (t > d) & (t <= d + k2)
        phase_true = (d >= 0) & (t > d + k2)
        b = _categorical(tables[PERCEPTUAL], st, u[1])
        if phase_window.any():
            b[phase_window] = _categorical(tables[WINDOW], st[phase_window], u[1][phase_window])
        if phase_true.any():
            b[phase_true] = _categorical(tables[TRUE], st[phase_true], u[1][phase_true])
        nxt = sampler.draw(st, a, b, u[2])

        watching = flag[idx] & (d < 0)
        if watching.any():
            w = idx[watching]
            if with_actions:
                obs = llr[st[watching], b[watching], a[watching], nxt[watching]]
            else:
                obs = llr[st[watching], b[watching], nxt[watching]]
            obs = np.where(np.isnan(obs), np.inf, obs)
            with np.errstate(invalid="ignore"):
                phi[w] = np.where(np.isinf(phi[w]) | (obs == np.inf), np.inf,
                                  np.maximum(phi[w] + obs, 0.0))
            hit = check_stop(phi[w], detector_cfg)
            det_step[w[hit]] = t + 1
        s[idx] = nxt
        if record:
            for k, i in enumerate(idx):
                plays[i].extend(a[k], b[k], nxt[k])
                traces[i].append(float(phi[i]))

        resolve_regions(t + 1)
        # detection closes the semi-MDP accounting unless a region was entered
        det_now = ~settled & (det_step == t + 1)
        payoff[det_now] = eq[s[det_now]] * gamma ** (t + 1)
        outcome[det_now] = _CODE[DETECTED]
        settled[det_now] = True

    return BatchResult(payoff, cont, outcome, cont_outcome, switch_step,
                       det_step, int(np.sum((det_step >= 0) & (switch_step < 0))), plays, traces)


def make_completion(bundle: HypergameBundle, fill: str | Fill, k2: int) -> BSRCompletion:
    if isinstance(fill, str):
        fill = {"keep_perceptual": Fill.keep_perceptual(), "uniform_random": Fill.uniform_random(),
                "fixed_strategy": Fill.fixed(bundle.pi2)}[fill]
    return BSRCompletion(BSRModel(bundle, DeceptionTimeline(k2=k2)), fill)


def rollout(bundle: HypergameBundle, policy: SwitchPolicy, completion: BSRCompletion,
            detector_cfg: DetectorConfig, s0: int, horizon: int, seed) -> RolloutRecord:
    """One recorded rollout; deterministic given ``seed``."""
    res = simulate_batch(bundle, policy, completion, detector_cfg, s0, horizon, 1, seed, record=True)
    sw = int(res.switch_step[0])
    det = int(res.detection_step[0])
    return RolloutRecord(
        play=res.plays[0], phi=res.phi_traces[0],
        switch_step=None if sw < 0 else sw, detection_step=None if det < 0 else det,
        outcome=OUTCOMES[res.outcome[0]], payoff=float(res.payoff[0]),
        continued_outcome=OUTCOMES[res.continued_outcome[0]],
        continued_payoff=float(res.continued_payoff[0]),
        false_alarm=det >= 0 and (sw < 0 or det < sw))


@dataclass
class MonteCarloEstimate:
    mean: float
    half_width: float
    n: int

    def __iter__(self):
        return iter((self.mean, self.half_width))


def mean_and_half_width(samples) -> MonteCarloEstimate:
    x = np.asarray(samples, dtype=float)
    if x.size < 30:
        raise ValueError("need at least 30 samples for a normal-approximation interval")
    sd = float(np.std(x, ddof=1))
    return MonteCarloEstimate(float(np.mean(x)), 1.959963984540054 * sd / math.sqrt(x.size), x.size)


def monte_carlo_payoff(bundle: HypergameBundle, policy: SwitchPolicy, completion: BSRCompletion,
                       detector_cfg: DetectorConfig, s0: int, horizon: int, n: int, seed, *,
                       continued: bool = True) -> MonteCarloEstimate:
    """Mean realized payoff with its 95% normal-approximation half-width."""
    if n < 30:
        raise ValueError("need at least 30 rollouts for a normal-approximation interval")
    res = simulate_batch(bundle, policy, completion, detector_cfg, s0, horizon, n, seed)
    return mean_and_half_width(res.continued_payoff if continued else res.payoff)
