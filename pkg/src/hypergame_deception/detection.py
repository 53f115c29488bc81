"""CUSUM change detection for P2.

P2 compares two Markov chains over game states: the null hypothesis, in
which P1 plays his perceptual best response, and the alternative, in which
he plays his true-game best response. The discrimination value is the
CUSUM statistic ``phi_n = max(phi_{n-1} + llr_n, 0)``; P2 stops as soon
as ``phi_n >= threshold``.

Observations P2 cannot explain under the null (probability zero) give an
infinite log-likelihood ratio under the default ``immediate_detect``
policy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .perception import HypergameBundle, perceptual_p1, true_p1

STATES_ONLY = "states_only"
WITH_ACTIONS = "states_and_p1_actions"
IMMEDIATE = "immediate_detect"
CLAMP = "clamp"


class ImpossibleObservationError(ValueError):
    """Observation has probability zero under both hypotheses."""


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float = 2.0
    observation_mode: str = STATES_ONLY
    zero_prob_policy: str = IMMEDIATE
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.observation_mode not in (STATES_ONLY, WITH_ACTIONS):
            raise ValueError(f"unknown observation mode {self.observation_mode!r}")
        if self.zero_prob_policy not in (IMMEDIATE, CLAMP):
            raise ValueError(f"unknown zero-probability policy {self.zero_prob_policy!r}")
        if self.zero_prob_policy == CLAMP and not 0.0 < self.clamp_eps <= 1e-3:
            raise ValueError("clamp epsilon must lie in (0, 1e-3]")


@dataclass(frozen=True)
class HypothesisChain:
    """Transition law of the observed process under one hypothesis.

    In ``states_only`` mode ``kernel[s, b, s']``; with P1's actions
    observable ``kernel[s, b, a, s']`` is the joint probability of P1
    playing ``a`` and the game moving to ``s'``.
    """

    kernel: np.ndarray
    label: str
    initial: int
    mode: str = STATES_ONLY

    def prob(self, obs: Observation) -> float:
        if self.mode == WITH_ACTIONS:
            if obs.a is None:
                raise ValueError("action-observable chain needs the P1 action")
            return float(self.kernel[obs.s, obs.b, obs.a, obs.s_next])
        return float(self.kernel[obs.s, obs.b, obs.s_next])


@dataclass(frozen=True)
class Observation:
    s: int
    b: int
    s_next: int
    a: int | None = None


@dataclass
class DetectorState:
    phi: float = 0.0
    detected: bool = False

    def observe(self, llr: float, cfg: DetectorConfig) -> bool:
        self.phi = update_discrimination(self.phi, llr)
        if check_stop(self.phi, cfg):
            self.detected = True
        return self.detected


def build_hypotheses(bundle: HypergameBundle, mode: str = STATES_ONLY
                     ) -> tuple[HypothesisChain, HypothesisChain]:
    """Null and alternative chains for P2's detector.

    Both chains use the true kernel; under the null P1's mixture is
    supported on visible actions only, so this coincides with the
    perceptual kernel there.
    """
    P = bundle.game.kernel
    pi0 = perceptual_p1(bundle)
    pi1 = true_p1(bundle)
    s0 = bundle.game.initial
    if mode == STATES_ONLY:
        k0 = np.einsum("sabt,sa->sbt", P, pi0)
        k1 = np.einsum("sabt,sa->sbt", P, pi1)
    elif mode == WITH_ACTIONS:
        k0 = np.einsum("sabt,sa->sbat", P, pi0)
        k1 = np.einsum("sabt,sa->sbat", P, pi1)
    else:
        raise ValueError(f"unknown observation mode {mode!r}")
    return (HypothesisChain(k0, "MC0", s0, mode), HypothesisChain(k1, "MC1", s0, mode))


def _ratio(p1: float, p0: float, policy: str, eps: float) -> float:
    if p0 <= 0.0 and p1 <= 0.0:
        raise ImpossibleObservationError("observation impossible under both hypotheses")
    if policy == CLAMP:
        return math.log(max(p1, eps) / max(p0, eps))
    if p0 <= 0.0:
        return math.inf
    if p1 <= 0.0:
        return -math.inf
    return math.log(p1 / p0)


def log_likelihood_ratio(mc0: HypothesisChain, mc1: HypothesisChain, obs: Observation,
                         policy: str = IMMEDIATE, clamp_eps: float = 1e-6) -> float:
    """log(Pr1 / Pr0) of one observed transition; may be +/-inf."""
    return _ratio(mc1.prob(obs), mc0.prob(obs), policy, clamp_eps)


def llr_table(mc0: HypothesisChain, mc1: HypothesisChain, policy: str = IMMEDIATE,
              clamp_eps: float = 1e-6) -> np.ndarray:
    """Vectorized log-likelihood ratios; NaN where both chains give zero."""
    p0, p1 = mc0.kernel, mc1.kernel
    with np.errstate(divide="ignore", invalid="ignore"):
        if policy == CLAMP:
            out = np.log(np.maximum(p1, clamp_eps) / np.maximum(p0, clamp_eps))
        else:
            out = np.log(p1) - np.log(p0)
    out[(p0 <= 0.0) & (p1 <= 0.0)] = np.nan
    return out


def update_discrimination(phi: float, llr: float) -> float:
    """CUSUM step ``max(phi + llr, 0)``; +inf is absorbing."""
    if phi == math.inf or llr == math.inf:
        return math.inf
    return max(phi + llr, 0.0)


def _suffix_sum(llrs: Sequence[float]) -> float:
    if any(v == math.inf for v in llrs):
        return math.inf
    if any(v == -math.inf for v in llrs):
        return -math.inf
    return math.fsum(llrs)


def batch_discrimination(mc0: HypothesisChain, mc1: HypothesisChain,
                         trace: Sequence[Observation], policy: str = IMMEDIATE,
                         clamp_eps: float = 1e-6) -> float:
    """Brute-force CUSUM statistic: the largest suffix sum of LLRs.

    The empty suffix counts as 0, matching the floor in the incremental
    form. Used as the reference for :func:`update_discrimination`.
    """
    if not trace:
        raise ValueError("trace must be non-empty")
    llrs = [log_likelihood_ratio(mc0, mc1, o, policy, clamp_eps) for o in trace]
    return batch_from_llrs(llrs)


def batch_from_llrs(llrs: Sequence[float]) -> float:
    best = 0.0
    for k in range(len(llrs)):
        best = max(best, _suffix_sum(llrs[k:]))
    return best


def check_stop(phi: float, cfg: DetectorConfig) -> bool:
    return phi >= cfg.threshold


def run_detector(mc0: HypothesisChain, mc1: HypothesisChain,
                 trace: Iterable[Observation], cfg: DetectorConfig) -> list[dict]:
    """Fold the detector over a trace, returning one row per observation."""
    state = DetectorState()
    rows = []
    for step, obs in enumerate(trace, start=1):
        llr = log_likelihood_ratio(mc0, mc1, obs, cfg.zero_prob_policy, cfg.clamp_eps)
        if not state.detected:
            state.observe(llr, cfg)
        rows.append({"step": step, "s": obs.s, "b": obs.b, "s_next": obs.s_next,
                     "a": obs.a, "llr": llr, "phi": state.phi, "detected": state.detected})
    return rows


TRACE_COLUMNS = ("step", "s", "b", "s_next", "a", "llr", "phi", "detected")


def write_trace_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r["step"], r["s"], r["b"], r["s_next"],
                        "" if r.get("a") is None else r["a"],
                        repr(float(r["llr"])), repr(float(r["phi"])), int(bool(r["detected"]))])


def read_trace_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({"step": int(r["step"]), "s": int(r["s"]), "b": int(r["b"]),
                         "s_next": int(r["s_next"]), "a": int(r["a"]) if r["a"] else None,
                         "llr": float(r["llr"]), "phi": float(r["phi"]),
                         "detected": r["detected"] == "1"})
    return rows
