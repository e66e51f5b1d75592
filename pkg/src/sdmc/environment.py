"""Controllable environment MDP and the stationary control-policy LP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import STOCH_TOL, _labels
from .optim import LpProblem, Status, solve_lp


class InfeasibleError(RuntimeError):
    """No stationary policy realizes the requested distribution."""

    def __init__(self, message, violated=()):
        super().__init__(message)
        self.violated = list(violated)


@dataclass(frozen=True)
class EnvMdp:
    """Finite MDP with ``transitions[s, s_prev, a]`` = P(next s | s_prev, a).

    Parameters
    ----------
    transitions : array_like, shape (M_s, M_s, M_a)
    costs : array_like, shape (M_s, M_a)
        Per state-action cost c_m(s, a).
    states, actions : sequence of str, optional
    initial_state : int
    """

    transitions: np.ndarray
    costs: np.ndarray
    states: tuple = None
    actions: tuple = None
    initial_state: int = 0

    def __post_init__(self):
        q = np.asarray(self.transitions, dtype=float)
        c = np.asarray(self.costs, dtype=float)
        if q.ndim != 3 or q.shape[0] != q.shape[1]:
            raise ValueError("transitions must have shape (M_s, M_s, M_a)")
        if c.shape != (q.shape[0], q.shape[2]):
            raise ValueError(f"costs must have shape {(q.shape[0], q.shape[2])}")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(q)):
            raise ValueError("MDP data must be finite")
        if np.any(q < 0):
            raise ValueError("transition probabilities must be nonnegative")
        sums = q.sum(axis=0)
        bad = np.argwhere(np.abs(sums - 1.0) > STOCH_TOL)
        if bad.size:
            sp, a = bad[0]
            raise ValueError(f"transition slice (state {sp}, action {a}) sums to {sums[sp, a]:.12g}")
        for name, arr in (("transitions", q), ("costs", c)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "states", _labels(self.states, "s", q.shape[0]))
        object.__setattr__(self, "actions", _labels(self.actions, "a", q.shape[2]))
        if not 0 <= self.initial_state < q.shape[0]:
            raise ValueError("initial state out of range")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[2]

    def state_costs(self) -> np.ndarray:
        """c_m(s) when costs do not depend on the action."""
        c = self.costs
        if np.any(np.abs(c - c[:, :1]) > 1e-12):
            raise ValueError("environment costs depend on the action; no state marginal is defined")
        return c[:, 0].copy()


@dataclass(frozen=True)
class ControlPolicy:
    """Stationary randomized policy ``table[s, a]`` = P(a | s)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim != 2:
            raise ValueError("policy table must be (M_s, M_a)")
        if np.any(t < -1e-12):
            raise ValueError("policy probabilities must be nonnegative")
        sums = t.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > STOCH_TOL)
        if bad.size:
            raise ValueError(f"policy row {int(bad[0])} sums to {sums[bad[0]]:.12g}")
        t = np.clip(t, 0.0, None)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def deterministic(cls, actions, n_actions):
        t = np.zeros((len(actions), n_actions))
        t[np.arange(len(actions)), actions] = 1.0
        return cls(t)


def induced_env_chain(mdp: EnvMdp, policy: ControlPolicy) -> np.ndarray:
    """Column-stochastic state matrix ``Q[s, s']`` under ``policy``."""
    t = policy.table if isinstance(policy, ControlPolicy) else np.asarray(policy, dtype=float)
    if t.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {t.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}")
    return np.einsum("tua,ua->tu", mdp.transitions, t)


@dataclass
class ControlLpResult:
    Y: np.ndarray
    policy: ControlPolicy
    cost: float
    residual: float


def extract_control_policy(Y) -> ControlPolicy:
    """P(a|s) = Y(s,a)/sum_a Y(s,a); uniform where the state has no mass."""
    Y = np.clip(np.asarray(Y, dtype=float), 0.0, None)
    tot = Y.sum(axis=1, keepdims=True)
    uniform = np.full_like(Y, 1.0 / Y.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(tot > 1e-12, Y / np.where(tot > 0, tot, 1.0), uniform)
    return ControlPolicy(t / t.sum(axis=1, keepdims=True))


def control_lp_problem(mdp: EnvMdp, target) -> LpProblem:
    """LP over Y(s, a) (flattened state-major)."""
    Ms, Ma = mdp.n_states, mdp.n_actions
    n = Ms * Ma
    rows, rhs = [], []
    for s in range(Ms):
        row = np.zeros((Ms, Ma))
        row[s, :] += 1.0
        row -= mdp.transitions[s]  # q(s | s', a) over (s', a)
        rows.append(row.reshape(-1))
        rhs.append(0.0)
    rows.append(np.ones(n))
    rhs.append(1.0)
    for s in range(Ms):
        row = np.zeros((Ms, Ma))
        row[s, :] = 1.0
        rows.append(row.reshape(-1))
        rhs.append(float(target[s]))
    return LpProblem(c=mdp.costs.reshape(-1), A_eq=np.array(rows), b_eq=np.array(rhs))


def constraint_names(mdp: EnvMdp):
    return ([f"flow-balance[{s}]" for s in mdp.states] + ["normalization"]
            + [f"stationarity-pin[{s}]" for s in mdp.states])


def solve_control_lp(mdp: EnvMdp, target) -> ControlLpResult:
    """Cheapest stationary policy whose induced chain has ``target`` as fixed point.

    Raises
    ------
    InfeasibleError
        With the names of the constraints the phase-1 problem could not meet.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    if target.size != mdp.n_states:
        raise ValueError("target length does not match the number of states")
    if np.any(target < 0) or abs(target.sum() - 1.0) > STOCH_TOL:
        raise ValueError("target must be a probability distribution")
    sol = solve_lp(control_lp_problem(mdp, target))
    if sol.status == Status.INFEASIBLE:
        names = constraint_names(mdp)
        violated = [names[k] for k in sol.info.get("violated_rows", [])]
        raise InfeasibleError(f"no stationary policy realizes target {target.tolist()}; violated: {violated}",
                              violated)
    if sol.status != Status.OPTIMAL:
        raise RuntimeError(f"control LP ended with status {sol.status.value}")
    Y = sol.x.reshape(mdp.n_states, mdp.n_actions)
    policy = extract_control_policy(Y)
    Q = induced_env_chain(mdp, policy)
    residual = float(np.max(np.abs(Q @ target - target)))
    if residual > 1e-7:
        raise RuntimeError(f"extracted policy misses the target (residual {residual:.3g})")
    return ControlLpResult(Y=Y, policy=policy, cost=float(sol.objective), residual=residual)
