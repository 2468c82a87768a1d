"""Learning and control algorithms: the virtual policy, the lookahead-guided
real policy, the alternating virtual/real trainer, short/long-sight policy
combination, and the plain Q-learning / stochastic multi-step baselines.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import mdp
from .mdp import N_ACTIONS, N_STATES, RewardTable, action_feed, encode_state
from .reactor import (
    DEFAULT_INITIAL_STATE,
    KineticsParams,
    ReactorState,
    Trajectory,
    apply_volume_cap,
    integrate_step,
)
from .surrogate import (
    VirtualSpace,
    VirtualState,
    CellState,
    observe_virtual,
    reset_virtual,
    step_virtual,
)


@dataclass
class QTable:
    """Tabular action values over 10 states x 9 actions, plus visit counts."""

    values: np.ndarray = field(default_factory=lambda: np.zeros((N_STATES, N_ACTIONS)))
    counts: np.ndarray = field(
        default_factory=lambda: np.zeros((N_STATES, N_ACTIONS), dtype=int)
    )

    def q(self, state: int, action: int) -> float:
        return float(self.values[state - 1, action - 1])


@dataclass
class RVLConfig:
    alpha: float = 0.1
    gamma_v: float = 0.7
    gamma_r: float = 0.98
    epsilon: float = 0.7  # probability of exploitation
    top_k: int = 3
    n_sight: int = 1
    schedule_period: int = 10
    episodes: int = 5000
    m_max: int = mdp.DEFAULT_M_MAX
    period_length: int = mdp.DEFAULT_PERIOD_LENGTH
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not (0 < self.gamma_v < 1 and 0 < self.gamma_r < 1):
            raise ValueError("discount factors must be in (0, 1)")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        if not 1 <= self.top_k <= N_ACTIONS:
            raise ValueError("top_k must be in 1..9")
        if not 1 <= self.n_sight <= 120:
            raise ValueError("n_sight must be in 1..120")
        if self.schedule_period < 1 or self.episodes < 0 or self.m_max < 1:
            raise ValueError("bad schedule/episode/m_max setting")


@dataclass
class BaselineConfig:
    alpha: float = 0.1
    gamma: float = 0.98
    epsilon: float = 0.7
    episodes: int = 5000
    m_max: int = mdp.DEFAULT_M_MAX
    seed: int = 0


@dataclass
class SightPolicy:
    """The pair of tables one lookahead depth produces."""

    virtual: QTable
    real: QTable
    n_sight: int


@dataclass
class CombinedPolicy:
    values: np.ndarray  # (10, 9) elementwise max of two final tables


@dataclass
class LogRow:
    iteration: int
    kind: str  # "virtual" | "real"
    episode_return: float


def epsilon_greedy(qtable: QTable, state: int, epsilon: float,
                   rng: np.random.Generator) -> int:
    """With probability epsilon exploit (ties broken uniformly at random),
    otherwise explore uniformly.

    Random tie-breaking matters on fresh all-zero rows: a fixed-index rule
    would hammer one action during warmup and bias the tables it seeds.
    """
    if rng.random() < epsilon:
        row = qtable.values[state - 1]
        best = np.flatnonzero(row == row.max())
        return int(rng.choice(best)) + 1
    return int(rng.integers(1, N_ACTIONS + 1))


def update_virtual_q(bv: QTable, s: int, a: int, r: float, s_next: int,
                     alpha: float, gamma_v: float) -> QTable:
    """Virtual-policy update bootstrapping on the table's own max."""
    target = r + gamma_v * float(np.max(bv.values[s_next - 1]))
    bv.values[s - 1, a - 1] += alpha * (target - bv.values[s - 1, a - 1])
    bv.counts[s - 1, a - 1] += 1
    return bv


def update_real_q(br: QTable, lv: QTable, s: int, a_best: int, r: float,
                  s_next: int, alpha: float, gamma_r: float) -> QTable:
    """Real-policy update bootstrapping on the virtual table at the same
    action."""
    target = r + gamma_r * lv.q(s_next, a_best)
    br.values[s - 1, a_best - 1] += alpha * (target - br.values[s - 1, a_best - 1])
    br.counts[s - 1, a_best - 1] += 1
    return br


def update_virtual_feedback(bv: QTable, lr, s: int, a: int, r: float,
                            s_next: int, alpha: float, gamma_v: float) -> QTable:
    """Virtual-policy refinement bootstrapping on the real table.

    lr only needs a .q(state, action) accessor, so a merged view over several
    real tables works too.
    """
    target = r + gamma_v * lr.q(s_next, a)
    bv.values[s - 1, a - 1] += alpha * (target - bv.values[s - 1, a - 1])
    bv.counts[s - 1, a - 1] += 1
    return bv


def top_k_actions(bv: QTable, state: int, k: int) -> list[int]:
    """The k actions with largest values in the state's row, descending,
    ties resolved toward the lowest action index."""
    if not 1 <= k <= N_ACTIONS:
        raise ValueError("k must be in 1..9")
    order = np.argsort(-bv.values[state - 1], kind="stable")
    return [int(i) + 1 for i in order[:k]]


StepFn = Callable[[object, int], tuple[object, int]]


def lookahead_select(step_fn: StepFn, carried, bv: QTable,
                     candidates: Sequence[int], n_sight: int,
                     reward_fn: Callable[[int], float],
                     r_current: float = 0.0,
                     score: str = "terminal") -> tuple[int, float]:
    """Rank candidate actions by an n_sight-step rollout of the model behind
    step_fn, following greedy-on-bv actions after the candidate step.

    With score="terminal" a candidate is judged by r_current plus the reward
    of the state the rollout lands in after n_sight steps: the sight depth is
    a target horizon, and intermediate states only steer the greedy
    continuation. With score="path" the accumulated reward of every visited
    state is used instead; this is the right reading when the horizon is
    clipped by the end of the batch, where the landing state is the flat
    batch tail and carries no signal. Ties resolve toward the earlier
    candidate in both modes.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    if n_sight < 1:
        raise ValueError("n_sight must be >= 1")
    if score not in ("terminal", "path"):
        raise ValueError(f"unknown score mode: {score}")
    best_action = None
    best_return = -np.inf
    for ci, a in enumerate(candidates):
        try:
            st, s = step_fn(carried, a)
        except Exception as exc:
            raise RuntimeError(f"virtual step failed for candidate {ci}") from exc
        path = reward_fn(s)
        for _ in range(n_sight - 1):
            a2 = int(np.argmax(bv.values[s - 1])) + 1
            st, s = step_fn(st, a2)
            path += reward_fn(s)
        total = r_current + (reward_fn(s) if score == "terminal" else path)
        if total > best_return:
            best_action, best_return = a, total
    return best_action, best_return


class VirtualProcess:
    """Stepwise-environment adapter over a VirtualSpace, with an instrumented
    count of single-model-pair evaluations."""

    def __init__(self, space: VirtualSpace):
        self.space = space
        self.steps = 0

    def reset(self, c0: float = 0.0, d0: float = 0.0) -> VirtualState:
        return reset_virtual(self.space, c0, d0)

    def step(self, state: VirtualState, action: int) -> tuple[VirtualState, int]:
        prev_c, prev_d = state.y_c, state.y_d
        y_c, y_d, nxt = step_virtual(self.space, state, action_feed(action))
        self.steps += 1
        return nxt, encode_state(y_c - prev_c, y_d - prev_d)

    def observe(self, state: VirtualState, u: float, c_meas: float,
                d_meas: float) -> VirtualState:
        return observe_virtual(self.space, state, u, c_meas, d_meas)

    # Batched rollout support ------------------------------------------------

    def fork(self, state: VirtualState, k: int) -> VirtualState:
        def tile(cell: CellState) -> CellState:
            return CellState(np.tile(cell.h, (k, 1)), np.tile(cell.c, (k, 1)))

        return VirtualState(
            cell_c=tile(state.cell_c),
            cell_d=tile(state.cell_d),
            y_c=np.full(k, float(state.y_c)),
            y_d=np.full(k, float(state.y_d)),
        )

    def step_many(self, state: VirtualState, actions: np.ndarray
                  ) -> tuple[VirtualState, np.ndarray]:
        u = np.array([action_feed(int(a)) for a in actions])
        prev_c, prev_d = state.y_c, state.y_d
        y_c, y_d, nxt = step_virtual(self.space, state, u)
        self.steps += len(actions)
        states = np.array([
            encode_state(float(dc), float(dd))
            for dc, dd in zip(y_c - prev_c, y_d - prev_d)
        ])
        return nxt, states


def lookahead_select_batched(vproc: VirtualProcess, carried: VirtualState,
                             bv: QTable, candidates: Sequence[int], n_sight: int,
                             rewards: RewardTable, r_current: float = 0.0,
                             score: str = "terminal") -> tuple[int, float]:
    """Same contract as lookahead_select over the virtual process, advancing
    all candidate rollouts in one batched model evaluation per step."""
    k = len(candidates)
    if k == 0:
        raise ValueError("need at least one candidate")
    if score not in ("terminal", "path"):
        raise ValueError(f"unknown score mode: {score}")
    st = vproc.fork(carried, k)
    st, s = vproc.step_many(st, np.array(candidates))
    path = np.array([rewards(int(x)) for x in s])
    for _ in range(n_sight - 1):
        acts = np.argmax(bv.values[s - 1], axis=1) + 1
        st, s = vproc.step_many(st, acts)
        path += np.array([rewards(int(x)) for x in s])
    terminal = np.array([rewards(int(x)) for x in s])
    totals = r_current + (terminal if score == "terminal" else path)
    best = int(np.argmax(totals))
    return candidates[best], float(totals[best])


def combine_policies(short: SightPolicy, long: SightPolicy) -> CombinedPolicy:
    """Elementwise maximum over the two final (real) tables."""
    return CombinedPolicy(values=np.maximum(short.real.values, long.real.values))


class _MergedReal:
    """Read-only max view over several real tables, for the feedback update."""

    def __init__(self, tables: Sequence[QTable]):
        self.tables = list(tables)

    def q(self, state: int, action: int) -> float:
        return max(t.q(state, action) for t in self.tables)

    def visited(self, state: int, action: int) -> bool:
        return any(t.counts[state - 1, action - 1] > 0 for t in self.tables)


def _virtual_episode(vproc: VirtualProcess, bv: QTable, real: _MergedReal,
                     cfg: RVLConfig, rewards: RewardTable,
                     rng: np.random.Generator, n_steps: int,
                     use_feedback: bool) -> float:
    """One episode against the virtual process, one table update per step.

    The chosen action is held for a random m steps. Feedback updates bootstrap
    on the real tables only where real experience exists; elsewhere the
    self-bootstrapping rule applies (an all-zero real entry would otherwise
    drag the virtual values toward zero and starve the candidate set).
    """
    state = vproc.reset()
    s = encode_state(0.0, 0.0)
    t = 0
    total = 0.0
    while t < n_steps:
        m = mdp.sample_multistep(rng, n_steps - t, cfg.m_max)
        a = epsilon_greedy(bv, s, cfg.epsilon, rng)
        for _ in range(m):
            state, s_next = vproc.step(state, a)
            r = rewards(s_next)
            if use_feedback and real.visited(s_next, a):
                update_virtual_feedback(bv, real, s, a, r, s_next,
                                        cfg.alpha, cfg.gamma_v)
            else:
                update_virtual_q(bv, s, a, r, s_next, cfg.alpha, cfg.gamma_v)
            s = s_next
            t += 1
            total += r
    return total


def _real_episode(kinetics: KineticsParams, initial: ReactorState,
                  vproc: VirtualProcess, bv: QTable, br: QTable,
                  n_sight: int, cfg: RVLConfig, rewards: RewardTable,
                  rng: np.random.Generator) -> float:
    """One lookahead-guided episode on the reactor, updating the sight's real
    table once per control step while the selected action is held."""
    n_steps = kinetics.n_steps
    state = initial
    carried = vproc.reset(initial.c, initial.d)
    s = encode_state(0.0, 0.0)
    t = 0
    total = 0.0
    while t < n_steps:
        m = mdp.sample_multistep(rng, n_steps - t, cfg.m_max)
        candidates = top_k_actions(bv, s, cfg.top_k)
        remaining = n_steps - t
        depth = min(n_sight, remaining)
        # a horizon that sees past the batch end scores by the remaining
        # path's total reward; one that ends mid-batch scores by where it
        # lands (the long sight always clips, immediates only near the end)
        mode = "path" if n_sight >= remaining else "terminal"
        a_best, _ = lookahead_select_batched(
            vproc, carried, bv, candidates, depth, rewards, rewards(s),
            score=mode,
        )
        u = action_feed(a_best)
        for _ in range(m):
            u_eff = apply_volume_cap(state, u, kinetics)
            new_state = integrate_step(state, u_eff, kinetics)
            s_next = encode_state(new_state.c - state.c, new_state.d - state.d)
            r = rewards(s_next)
            update_real_q(br, bv, s, a_best, r, s_next, cfg.alpha, cfg.gamma_r)
            carried = vproc.observe(carried, u_eff, new_state.c, new_state.d)
            state = new_state
            s = s_next
            t += 1
            total += r
    return total


def train_sights(kinetics: KineticsParams, space: VirtualSpace, cfg: RVLConfig,
                 sights: Sequence[int],
                 rewards: RewardTable = RewardTable(),
                 initial: ReactorState = DEFAULT_INITIAL_STATE,
                 ) -> tuple[dict[int, SightPolicy], list[LogRow]]:
    """Alternating trainer over one shared virtual table.

    Virtual episodes refine the shared virtual table; every
    schedule_period-th iteration runs one lookahead-guided real episode per
    sight, each maintaining its own real table. Sharing the virtual table is
    what makes the sights' real values comparable, so the elementwise-max
    combination of two real tables picks the better-scoring action instead of
    the one from whichever run happened to produce larger numbers.
    """
    if not sights or len(set(sights)) != len(sights):
        raise ValueError("need a non-empty set of distinct sights")
    rng = np.random.default_rng(cfg.seed)
    vproc = VirtualProcess(space)
    bv = QTable()
    brs = {n: QTable() for n in sights}
    merged = _MergedReal(list(brs.values()))
    log: list[LogRow] = []
    n_steps = kinetics.n_steps
    for j in range(1, cfg.episodes + 1):
        if j % cfg.schedule_period != 0:
            ret = _virtual_episode(
                vproc, bv, merged, cfg, rewards, rng, n_steps,
                use_feedback=j >= cfg.schedule_period,
            )
            log.append(LogRow(j, "virtual", ret))
        else:
            for n in sights:
                ret = _real_episode(kinetics, initial, vproc, bv, brs[n],
                                    n, cfg, rewards, rng)
                log.append(LogRow(j, f"real-{n}", ret))
    policies = {n: SightPolicy(virtual=bv, real=brs[n], n_sight=n)
                for n in sights}
    return policies, log


def train_rvl(kinetics: KineticsParams, space: VirtualSpace, cfg: RVLConfig,
              rewards: RewardTable = RewardTable(),
              initial: ReactorState = DEFAULT_INITIAL_STATE,
              ) -> tuple[SightPolicy, list[LogRow]]:
    """Single-sight convenience wrapper around train_sights."""
    policies, log = train_sights(kinetics, space, cfg, (cfg.n_sight,),
                                 rewards, initial)
    return policies[cfg.n_sight], log


def _train_baseline(kinetics: KineticsParams, cfg: BaselineConfig,
                    rewards: RewardTable, m_max: int,
                    initial: ReactorState) -> tuple[QTable, list[LogRow]]:
    rng = np.random.default_rng(cfg.seed)
    q = QTable()
    log: list[LogRow] = []
    n_steps = kinetics.n_steps
    for ep in range(1, cfg.episodes + 1):
        state = initial
        s = encode_state(0.0, 0.0)
        t = 0
        total = 0.0
        while t < n_steps:
            m = mdp.sample_multistep(rng, n_steps - t, m_max)
            a = epsilon_greedy(q, s, cfg.epsilon, rng)
            u = action_feed(a)
            r_sum = 0.0
            s_next = s
            for _ in range(m):
                u_eff = apply_volume_cap(state, u, kinetics)
                new_state = integrate_step(state, u_eff, kinetics)
                s_next = encode_state(new_state.c - state.c, new_state.d - state.d)
                r_sum += rewards(s_next)
                state = new_state
                t += 1
            update_virtual_q(q, s, a, r_sum, s_next, cfg.alpha, cfg.gamma)
            s = s_next
            total += r_sum
        log.append(LogRow(ep, "real", total))
    return q, log


def train_q_learning(kinetics: KineticsParams, cfg: BaselineConfig,
                     rewards: RewardTable = RewardTable(),
                     initial: ReactorState = DEFAULT_INITIAL_STATE,
                     ) -> tuple[QTable, list[LogRow]]:
    """Vanilla tabular Q-learning with single-step actions on the reactor."""
    return _train_baseline(kinetics, cfg, rewards, m_max=1, initial=initial)


def train_smsa(kinetics: KineticsParams, cfg: BaselineConfig,
               rewards: RewardTable = RewardTable(),
               initial: ReactorState = DEFAULT_INITIAL_STATE,
               ) -> tuple[QTable, list[LogRow]]:
    """Q-learning with random-duration multi-step actions on the reactor."""
    return _train_baseline(kinetics, cfg, rewards, m_max=cfg.m_max, initial=initial)


@dataclass
class ControlMetrics:
    final_c: float
    final_d: float
    final_v: float
    c_minus_d: float
    objective: float  # ([C]-[D]) * [V]
    total_benefits: float
    trajectory: Trajectory
    step_rewards: list[float]

    def to_dict(self) -> dict:
        return {
            "final_c": self.final_c,
            "final_d": self.final_d,
            "final_v": self.final_v,
            "c_minus_d": self.c_minus_d,
            "objective": self.objective,
            "total_benefits": self.total_benefits,
        }


def policy_values(policy) -> np.ndarray:
    """The 10 x 9 greedy table behind any trained policy object."""
    if isinstance(policy, np.ndarray):
        values = policy
    elif isinstance(policy, QTable):
        values = policy.values
    elif isinstance(policy, SightPolicy):
        values = policy.real.values
    elif isinstance(policy, CombinedPolicy):
        values = policy.values
    else:
        raise TypeError(f"not a policy: {type(policy)!r}")
    if values.shape != (N_STATES, N_ACTIONS):
        raise ValueError(f"bad table shape: {values.shape}")
    return values


def evaluate_policy(policy, kinetics: KineticsParams,
                    rewards: RewardTable = RewardTable(),
                    initial: ReactorState = DEFAULT_INITIAL_STATE) -> ControlMetrics:
    """One deterministic greedy episode on the reactor plus the summary
    metrics of its final state."""
    values = policy_values(policy)
    n_steps = kinetics.n_steps
    state = initial
    states = [state]
    controls: list[float] = []
    step_rewards: list[float] = []
    s = encode_state(0.0, 0.0)
    for _ in range(n_steps):
        a = int(np.argmax(values[s - 1])) + 1
        u_eff = apply_volume_cap(state, action_feed(a), kinetics)
        new_state = integrate_step(state, u_eff, kinetics)
        s = encode_state(new_state.c - state.c, new_state.d - state.d)
        step_rewards.append(rewards(s))
        controls.append(u_eff)
        states.append(new_state)
        state = new_state
    final = state
    c_minus_d = final.c - final.d
    return ControlMetrics(
        final_c=final.c,
        final_d=final.d,
        final_v=final.v,
        c_minus_d=c_minus_d,
        objective=c_minus_d * final.v,
        total_benefits=mdp.episode_return(step_rewards, 1.0),
        trajectory=Trajectory(states=states, controls=controls),
        step_rewards=step_rewards,
    )


POLICY_SCHEMA = 1


def save_policy(policy, path: str | Path, meta: dict | None = None) -> None:
    doc: dict = {"schema_version": POLICY_SCHEMA}
    if isinstance(policy, SightPolicy):
        doc["kind"] = "sight"
        doc["n_sight"] = policy.n_sight
        doc["virtual"] = policy.virtual.values.tolist()
        doc["virtual_counts"] = policy.virtual.counts.tolist()
        doc["real"] = policy.real.values.tolist()
        doc["real_counts"] = policy.real.counts.tolist()
    elif isinstance(policy, CombinedPolicy):
        doc["kind"] = "combined"
        doc["values"] = policy.values.tolist()
    elif isinstance(policy, QTable):
        doc["kind"] = "qtable"
        doc["values"] = policy.values.tolist()
        doc["counts"] = policy.counts.tolist()
    else:
        raise TypeError(f"not a policy: {type(policy)!r}")
    doc.update(meta or {})
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_policy(path: str | Path):
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != POLICY_SCHEMA:
        raise ValueError(f"unsupported policy schema: {doc.get('schema_version')}")
    kind = doc["kind"]
    if kind == "sight":
        return SightPolicy(
            virtual=QTable(np.array(doc["virtual"]), np.array(doc["virtual_counts"], dtype=int)),
            real=QTable(np.array(doc["real"]), np.array(doc["real_counts"], dtype=int)),
            n_sight=int(doc["n_sight"]),
        ), doc
    if kind == "combined":
        return CombinedPolicy(values=np.array(doc["values"])), doc
    if kind == "qtable":
        return QTable(np.array(doc["values"]), np.array(doc["counts"], dtype=int)), doc
    raise ValueError(f"unknown policy kind: {kind}")
