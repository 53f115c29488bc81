"""Semi-MDP planning of a one-time strategy switch.

P1 decides, at states ``(s, level, flag)``, whether to keep playing his
perceptual best response (macro-action 0) or to switch for good to his
true-game best response (macro-action 1). Nature then resolves the joint
action. After the switch every transition updates P2's discrimination
value, discretized into ``n = c / delta`` levels plus an "exceeded" level.

Termination and rewards (paid at nature states):

* ``s`` in P1's ASW region: +1, in P2's: -1;
* discrimination level exceeded (P2 detected the switch): the zero-sum
  equilibrium value of ``s`` in the true game;
* otherwise 0, and play continues with one step of discount.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .detection import DetectorConfig, build_hypotheses, llr_table
from .game import ConfigError
from .matrix_game import NonConvergenceError
from .perception import HypergameBundle, perceptual_p1, perceptual_p2, true_p1

KEEP, SWITCH = 0, 1
MACRO_NAMES = ("pi1_p", "pi1")
_EX_RTOL = 1e-12


class OutOfScopeError(ValueError):
    """VoD requested for a state already decided in the true game."""


@dataclass(frozen=True)
class PhiLevel:
    """Discretized discrimination value: 1-based ``index`` or exceeded."""

    index: int | None
    delta: float
    threshold: float

    @property
    def exceeded(self) -> bool:
        return self.index is None

    @property
    def midpoint(self) -> float:
        if self.index is None:
            return math.inf
        return (2 * self.index - 1) * self.delta / 2

    def __str__(self):
        return "phi_ex" if self.index is None else f"phi_{self.index}"


def n_levels(delta: float, threshold: float) -> int:
    if delta <= 0 or threshold <= 0:
        raise ConfigError("delta and threshold must be positive")
    ratio = threshold / delta
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"threshold {threshold} is not a multiple of delta {delta}")
    return n


def discretize_phi(phi: float, delta: float, threshold: float) -> PhiLevel:
    """Map a discrimination value to its level.

    Shared interval endpoints belong to the lower interval; 0 is level 1.
    """
    n = n_levels(delta, threshold)
    if phi < 0:
        raise ValueError("discrimination value must be non-negative")
    idx = int(_level_indices(np.array([phi]), delta, threshold, n)[0])
    return PhiLevel(None if idx == n else idx + 1, delta, threshold)


def _level_indices(phi: np.ndarray, delta: float, threshold: float, n: int) -> np.ndarray:
    """0-based level index per value, ``n`` meaning exceeded."""
    phi = np.asarray(phi, dtype=float)
    ex = ~(phi <= threshold * (1 + _EX_RTOL))  # also catches nan / inf
    with np.errstate(invalid="ignore"):
        idx = np.ceil(phi / delta - 1e-9) - 1
    idx = np.clip(np.nan_to_num(idx, nan=0.0, posinf=0.0), 0, n - 1).astype(np.int64)
    return np.where(ex, n, idx)


@dataclass(eq=False)
class SemiMDP:
    """Explicit semi-MDP over decision states and nature states.

    Decision state ``(s, j, f)`` (``j`` 0-based level, ``n`` = exceeded)
    has index ``(s * L + j) * 2 + f`` with ``L = n + 1``; nature state
    ``(s, j, f, a, b)`` has index ``decision * A1 * A2 + a * A2 + b``.
    The sink is implicit: a nature row with ``to_sink`` has no successors.
    """

    n_states: int
    n_actions1: int
    n_actions2: int
    delta: float
    threshold: float
    gamma: float
    scale: float
    choose: tuple[sparse.csr_matrix, sparse.csr_matrix]
    available: np.ndarray
    nature: sparse.csr_matrix
    reward: np.ndarray
    to_sink: np.ndarray
    strong_opponent: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return n_levels(self.delta, self.threshold)

    @property
    def L(self) -> int:
        return self.n_levels + 1

    @property
    def n_decision(self) -> int:
        return self.n_states * self.L * 2

    @property
    def n_nature(self) -> int:
        return self.n_decision * self.n_actions1 * self.n_actions2

    def decision_index(self, s, level: int = 0, flag: int = 0):
        return (np.asarray(s) * self.L + level) * 2 + flag

    def decode_decision(self, d):
        d = np.asarray(d)
        return d // (2 * self.L), (d // 2) % self.L, d % 2

    def decode_nature(self, v):
        v = np.asarray(v)
        ab = self.n_actions1 * self.n_actions2
        d, rest = v // ab, v % ab
        s, j, f = self.decode_decision(d)
        return s, j, f, rest // self.n_actions2, rest % self.n_actions2


def build_semi_mdp(bundle: HypergameBundle, detector_cfg: DetectorConfig | None = None,
                   delta: float = 0.2, *, scale: float = 1.0,
                   strong_opponent: bool = False) -> SemiMDP:
    """Materialize the switching semi-MDP for a solved hypergame.

    With ``strong_opponent`` every transition after the switch goes to the
    sink with the equilibrium value, i.e. P2 detects the switch at once.
    """
    cfg = detector_cfg or DetectorConfig()
    c = cfg.threshold
    n = n_levels(delta, c)
    L = n + 1
    game = bundle.game
    S, A1, A2 = game.n_states, game.n_actions1, game.n_actions2
    AB = A1 * A2
    nD = S * L * 2
    nN = nD * AB

    mc0, mc1 = build_hypotheses(bundle, cfg.observation_mode)
    llr = llr_table(mc0, mc1, cfg.zero_prob_policy, cfg.clamp_eps)

    decided = bundle.decided
    s_idx = np.arange(S)
    j_idx = np.arange(L)
    # nature-state attributes laid out as (S, L, 2, A1, A2)
    s_of = np.broadcast_to(s_idx[:, None, None, None, None], (S, L, 2, A1, A2)).ravel()
    j_of = np.broadcast_to(j_idx[None, :, None, None, None], (S, L, 2, A1, A2)).ravel()
    f_of = np.broadcast_to(np.arange(2)[None, None, :, None, None], (S, L, 2, A1, A2)).ravel()

    reward = np.zeros(nN)
    reward[bundle.asw1.members[s_of]] = 1.0
    reward[bundle.asw2.members[s_of]] = -1.0
    detect = ~decided[s_of] & ((j_of == n) | (strong_opponent & (f_of == 1)))
    reward[detect] = bundle.eq_value[s_of[detect]]
    reward *= scale
    to_sink = decided[s_of] | (j_of == n) | (strong_opponent & (f_of == 1))

    # nature -> decision transitions
    defined = game.defined()
    live = defined & ~decided[:, None, None]
    ss, aa, bb, tt = np.nonzero(game.kernel * live[..., None])
    pp = game.kernel[ss, aa, bb, tt]
    if cfg.observation_mode == "states_only":
        l_obs = llr[ss, bb, tt]
    else:
        l_obs = llr[ss, bb, aa, tt]
    rows, cols, vals = [], [], []
    mids = (np.arange(n) + 0.5) * delta
    for j in range(n):
        base = (ss * L + j) * 2
        rows.append(base * AB + aa * A2 + bb)
        cols.append((tt * L + j) * 2)
        vals.append(pp)
        if strong_opponent:
            continue
        with np.errstate(invalid="ignore"):
            phi_next = np.maximum(mids[j] + l_obs, 0.0)
        phi_next[np.isnan(l_obs)] = np.inf
        j_next = _level_indices(phi_next, delta, c, n)
        rows.append((base + 1) * AB + aa * A2 + bb)
        cols.append((tt * L + j_next) * 2 + 1)
        vals.append(pp)
    nature = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nN, nD))

    # decision -> nature choice matrices
    p2 = perceptual_p2(bundle)
    pk = perceptual_p1(bundle)
    ps = true_p1(bundle)
    joint_keep = (pk[:, :, None] * p2[:, None, :]).reshape(S, AB)
    joint_switch = (ps[:, :, None] * p2[:, None, :]).reshape(S, AB)
    keep = _choice_matrix(joint_keep, S, L, AB, from_flags=(0,), to_flag=0)
    switch = _choice_matrix(joint_switch, S, L, AB, from_flags=(0, 1), to_flag=1)
    available = np.zeros((nD, 2), dtype=bool)
    available[0::2, KEEP] = True
    available[:, SWITCH] = True

    meta = {"observation_mode": cfg.observation_mode,
            "zero_prob_policy": cfg.zero_prob_policy, "clamp_eps": cfg.clamp_eps,
            "game": game.fingerprint(), "visible": list(bundle.visible)}
    return SemiMDP(S, A1, A2, float(delta), float(c), bundle.gamma, float(scale),
                   (keep, switch), available, nature, reward, to_sink,
                   strong_opponent, meta)


def _choice_matrix(joint, S, L, AB, from_flags, to_flag):
    s_nz, ab_nz = np.nonzero(joint)
    p = joint[s_nz, ab_nz]
    rows, cols, vals = [], [], []
    for j in range(L):
        for f in from_flags:
            rows.append((s_nz * L + j) * 2 + f)
            cols.append(((s_nz * L + j) * 2 + to_flag) * AB + ab_nz)
            vals.append(p)
    nD = S * L * 2
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nD, nD * AB))


def build_strong_opponent_mdp(bundle: HypergameBundle, detector_cfg: DetectorConfig | None = None,
                              delta: float = 0.2, *, scale: float = 1.0) -> SemiMDP:
    """Semi-MDP against an opponent who detects the switch immediately."""
    return build_semi_mdp(bundle, detector_cfg, delta, scale=scale, strong_opponent=True)


@dataclass(eq=False)
class SwitchPolicy:
    """Macro-action per decision state of a particular semi-MDP."""

    actions: np.ndarray
    n_states: int
    delta: float
    threshold: float

    @property
    def L(self) -> int:
        return n_levels(self.delta, self.threshold) + 1

    def action(self, s: int, level: int = 0, flag: int = 0) -> int:
        return int(self.actions[(s * self.L + level) * 2 + flag])

    def switch_states(self) -> np.ndarray:
        """Decision indices where P1 switches away from the perceptual strategy."""
        flag0 = np.arange(self.actions.size) % 2 == 0
        return np.flatnonzero(flag0 & (self.actions == SWITCH))

    def initial_switches(self) -> np.ndarray:
        """Boolean per game state: switch already at (s, level 1, flag 0)."""
        return self.actions[0::2 * self.L] == SWITCH

    def is_one_time(self) -> bool:
        return bool(np.all(self.actions[1::2] == SWITCH))

    def remap(self, mdp: SemiMDP) -> SwitchPolicy:
        """Carry this policy to ``mdp`` by looking up each level's midpoint."""
        n_src = n_levels(self.delta, self.threshold)
        n_dst = mdp.n_levels
        mids = (np.arange(n_dst) + 0.5) * mdp.delta
        src = np.append(_level_indices(mids, self.delta, self.threshold, n_src), n_src)
        s, j, f = mdp.decode_decision(np.arange(mdp.n_decision))
        acts = self.actions[(s * (n_src + 1) + src[j]) * 2 + f]
        acts = np.where(f == 1, SWITCH, acts)
        return SwitchPolicy(acts.astype(np.int8), mdp.n_states, mdp.delta, mdp.threshold)


@dataclass(eq=False)
class SemiMDPSolution:
    values: np.ndarray  # decision states
    nature_values: np.ndarray
    policy: SwitchPolicy
    residuals: list[float]
    mdp: SemiMDP

    def value(self, s, level: int = 0, flag: int = 0):
        return self.values[self.mdp.decision_index(s, level, flag)]


def _q_values(mdp: SemiMDP, V):
    VN = mdp.reward + mdp.gamma * (mdp.nature @ V)
    return VN, mdp.choose[KEEP] @ VN, mdp.choose[SWITCH] @ VN


def _greedy(mdp: SemiMDP, q_keep, q_switch, tie_eps):
    take_switch = ~mdp.available[:, KEEP] | (q_switch > q_keep + tie_eps)
    return np.where(take_switch, SWITCH, KEEP).astype(np.int8)


def solve_semi_mdp(mdp: SemiMDP, gamma: float | None = None, bellman_tol: float | None = None,
                   *, max_iter: int = 100_000, polish: bool = True) -> SemiMDPSolution:
    """Value iteration with greedy macro-action extraction.

    Iteration stops once the sweep residual certifies that the values are
    within ``bellman_tol / 2`` of the fixed point. Ties go to the perceptual
    strategy. With ``polish`` the greedy policy is refined by exact policy
    iteration and the returned values are its exact value.
    """
    gamma = mdp.gamma if gamma is None else float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ConfigError("semi-MDP value iteration needs a discount in (0, 1)")
    if gamma != mdp.gamma:
        mdp = _with_gamma(mdp, gamma)
    tol = 1e-3 * mdp.scale if bellman_tol is None else float(bellman_tol)
    stop = tol * (1 - gamma) / (2 * gamma)
    tie_eps = 1e-9 * mdp.scale

    V = np.zeros(mdp.n_decision)
    residuals = []
    for _ in range(max_iter):
        _, qk, qs = _q_values(mdp, V)
        V_new = np.where(mdp.available[:, KEEP], np.maximum(qk, qs), qs)
        res = float(np.max(np.abs(V_new - V)))
        residuals.append(res)
        V = V_new
        if res <= stop:
            break
    else:
        raise NonConvergenceError("semi-MDP value iteration exceeded its budget")

    _, qk, qs = _q_values(mdp, V)
    acts = _greedy(mdp, qk, qs, tie_eps)
    if polish:
        for _ in range(100):
            V = _evaluate_direct(mdp, acts)
            _, qk, qs = _q_values(mdp, V)
            cur = np.where(acts == SWITCH, qs, qk)
            better_switch = (acts == KEEP) & (qs > cur + tie_eps)
            better_keep = (acts == SWITCH) & mdp.available[:, KEEP] & (qk > cur + tie_eps)
            if not (better_switch.any() or better_keep.any()):
                break
            acts = np.where(better_switch, SWITCH, np.where(better_keep, KEEP, acts)).astype(np.int8)
    policy = SwitchPolicy(acts, mdp.n_states, mdp.delta, mdp.threshold)
    VN, _, _ = _q_values(mdp, V)
    return SemiMDPSolution(V, VN, policy, residuals, mdp)


def _with_gamma(mdp: SemiMDP, gamma: float) -> SemiMDP:
    from dataclasses import replace
    return replace(mdp, gamma=gamma)


def _policy_matrix(mdp: SemiMDP, acts):
    sel = sparse.diags((acts == SWITCH).astype(float))
    keep = sparse.diags((acts == KEEP).astype(float))
    return (keep @ mdp.choose[KEEP] + sel @ mdp.choose[SWITCH]).tocsr()


def _evaluate_direct(mdp: SemiMDP, acts):
    Dp = _policy_matrix(mdp, acts)
    T = (Dp @ mdp.nature).tocsc()
    A = sparse.identity(mdp.n_decision, format="csc") - mdp.gamma * T
    return spsolve(A, Dp @ mdp.reward)


def evaluate_policy(mdp: SemiMDP, policy: SwitchPolicy, method: str = "direct",
                    tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Value of ``policy`` at every decision state of ``mdp``.

    ``direct`` solves the linear system. ``iterative`` runs fixed sweeps
    from zero, so states whose reachable sub-chains coincide under two
    policies get bit-identical values.
    """
    if policy.actions.size != mdp.n_decision:
        policy = policy.remap(mdp)
    acts = np.where(mdp.available[:, KEEP], policy.actions, SWITCH)
    if method == "direct":
        return _evaluate_direct(mdp, acts)
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    Dp = _policy_matrix(mdp, acts)
    T = (Dp @ mdp.nature).tocsr()
    r = Dp @ mdp.reward
    # enough sweeps for gamma^k * |r|_max / (1 - gamma) <= tol
    rmax = max(float(np.max(np.abs(r))), 1e-300)
    k = int(math.ceil(math.log(tol * (1 - mdp.gamma) / rmax) / math.log(mdp.gamma))) + 1
    V = np.zeros(mdp.n_decision)
    for _ in range(min(max(k, 1), max_iter)):
        V = r + mdp.gamma * (T @ V)
    return V


@dataclass
class VodReport:
    state: int
    planner_value: float
    equilibrium_value: float
    vod: float
    scale: float


def value_of_deception(solution: SemiMDPSolution, bundle: HypergameBundle, s0: int) -> VodReport:
    """Planner value at ``(s0, level 1, no switch)`` minus the equilibrium value."""
    if bundle.decided[s0]:
        raise OutOfScopeError(f"state {s0} lies in an almost-sure winning region")
    scale = solution.mdp.scale
    vm = float(solution.value(s0))
    ue = float(bundle.eq_value[s0]) * scale
    return VodReport(int(s0), vm, ue, vm - ue, scale)


def vod_vector(solution: SemiMDPSolution, bundle: HypergameBundle) -> np.ndarray:
    """VoD for every game state; NaN on decided states."""
    scale = solution.mdp.scale
    out = solution.value(np.arange(bundle.game.n_states)) - bundle.eq_value * scale
    out = out.astype(float)
    out[bundle.decided] = np.nan
    return out


# -- serialization ---------------------------------------------------------

MDP_FORMAT = "switch-semi-mdp/1"
POLICY_FORMAT = "switch-policy/1"


def _triplets(m):
    coo = m.tocoo()
    return coo.row, coo.col, coo.data


def save_semi_mdp(mdp: SemiMDP, path) -> None:
    """Dump the semi-MDP; ``.npz`` is binary, anything else JSON."""
    header = {"format": MDP_FORMAT, "n_states": mdp.n_states, "n_actions1": mdp.n_actions1,
              "n_actions2": mdp.n_actions2, "delta": mdp.delta, "threshold": mdp.threshold,
              "gamma": mdp.gamma, "scale": mdp.scale, "strong_opponent": mdp.strong_opponent,
              "meta": mdp.meta}
    mats = {"keep": mdp.choose[KEEP], "switch": mdp.choose[SWITCH], "nature": mdp.nature}
    if str(path).endswith(".npz"):
        arrays = {"header": np.array(json.dumps(header)), "reward": mdp.reward,
                  "to_sink": mdp.to_sink, "available": mdp.available}
        for name, m in mats.items():
            r, c, v = _triplets(m)
            arrays[f"{name}_row"], arrays[f"{name}_col"], arrays[f"{name}_val"] = r, c, v
        np.savez_compressed(path, **arrays)
        return
    out = dict(header)
    out["reward"] = [repr(float(x)) for x in mdp.reward]
    out["to_sink"] = np.flatnonzero(mdp.to_sink).tolist()
    out["available_keep"] = np.flatnonzero(mdp.available[:, KEEP]).tolist()
    for name, m in mats.items():
        r, c, v = _triplets(m)
        out[name] = [[int(i), int(j), repr(float(x))] for i, j, x in zip(r, c, v)]
    with open(path, "w") as fh:
        json.dump(out, fh)


def load_semi_mdp(path) -> SemiMDP:
    if str(path).endswith(".npz"):
        z = np.load(path)
        header = json.loads(str(z["header"]))
        trip = {name: (z[f"{name}_row"], z[f"{name}_col"], z[f"{name}_val"])
                for name in ("keep", "switch", "nature")}
        reward, to_sink, available = z["reward"], z["to_sink"], z["available"]
    else:
        with open(path) as fh:
            header = json.load(fh)
        trip = {}
        for name in ("keep", "switch", "nature"):
            arr = header.pop(name)
            trip[name] = (np.array([t[0] for t in arr], dtype=np.int64),
                          np.array([t[1] for t in arr], dtype=np.int64),
                          np.array([float(t[2]) for t in arr]))
        reward = np.array(header.pop("reward"), dtype=float)
        sink_idx = header.pop("to_sink")
        keep_idx = header.pop("available_keep")
        to_sink = np.zeros(reward.size, dtype=bool)
        to_sink[sink_idx] = True
        available = None
    if header.get("format") != MDP_FORMAT:
        raise ConfigError(f"unsupported semi-MDP format {header.get('format')!r}")
    L = n_levels(header["delta"], header["threshold"]) + 1
    nD = header["n_states"] * L * 2
    nN = reward.size
    if available is None:
        available = np.zeros((nD, 2), dtype=bool)
        available[keep_idx, KEEP] = True
        available[:, SWITCH] = True
    keep = sparse.csr_matrix((trip["keep"][2], trip["keep"][:2]), shape=(nD, nN))
    switch = sparse.csr_matrix((trip["switch"][2], trip["switch"][:2]), shape=(nD, nN))
    nature = sparse.csr_matrix((trip["nature"][2], trip["nature"][:2]), shape=(nN, nD))
    return SemiMDP(header["n_states"], header["n_actions1"], header["n_actions2"],
                   header["delta"], header["threshold"], header["gamma"], header["scale"],
                   (keep, switch), np.asarray(available, bool), nature, np.asarray(reward, float),
                   np.asarray(to_sink, bool), header["strong_opponent"], header.get("meta", {}))


def policy_to_dict(policy: SwitchPolicy, mdp: SemiMDP, tol: float | None = None) -> dict:
    s, j, f = mdp.decode_decision(np.arange(mdp.n_decision))
    return {
        "format": POLICY_FORMAT,
        "delta": mdp.delta, "threshold": mdp.threshold, "gamma": mdp.gamma,
        "tol": tol, "scale": mdp.scale, "n_states": mdp.n_states,
        "macro_actions": list(MACRO_NAMES),
        "entries": [[int(a), int(b), int(c), MACRO_NAMES[int(x)]]
                    for a, b, c, x in zip(s, j, f, policy.actions)],
    }


def policy_from_dict(data: dict) -> SwitchPolicy:
    if data.get("format") != POLICY_FORMAT:
        raise ConfigError(f"unsupported policy format {data.get('format')!r}")
    L = n_levels(data["delta"], data["threshold"]) + 1
    acts = np.zeros(data["n_states"] * L * 2, dtype=np.int8)
    for s, j, f, name in data["entries"]:
        acts[(s * L + j) * 2 + f] = MACRO_NAMES.index(name)
    return SwitchPolicy(acts, data["n_states"], data["delta"], data["threshold"])
