"""Joint environment-control / transmission-power co-design over occupation measures.

Occupation measures are stored with axes ``(rate, state, power)`` and
flattened in that order (rate-major, then state, then power), which is also
the variable order of every optimization problem built here.

Two readings of the stability polynomials are supported:

``conditional`` (default)
    uses ``X(s, r_j, p)``, i.e. P(s, p | r_j) X(r_j); ``h_i <= 0`` is then
    exactly ``lambda_i^2 * sum_j Pbar_ij <= lambda_bar^2``.
``marginal``
    uses the state-power marginal ``X(s, p) = sum_r X(s, r, p)`` for every
    ``j``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import SdMcChannel, induced_rate_chain, stationary_distribution
from .environment import (
    ControlPolicy,
    EnvMdp,
    InfeasibleError,
    control_lp_problem,
    extract_control_policy,
    solve_control_lp,
)
from .optim import (
    LpProblem,
    NotConvexError,
    QcqpProblem,
    Status,
    grid_oracle,
    is_psd,
    solve_convex_qcqp,
    solve_cpop_local,
    solve_lp,
)
from .optim.local import default_starts
from .stability import StabilityParams

FORMS = ("conditional", "marginal")
BOUND_FORMS = ("proof", "theorem")


@dataclass(frozen=True)
class CostModel:
    """Environment, power and rate costs.

    Parameters
    ----------
    env_cost : array_like, shape (M_s, M_a)
    power_cost : array_like, shape (M_p,)
    rate_cost : array_like
        Shape ``(M_R,)`` or anything broadcastable to ``(M_R, M_s, M_p)``.
    joint : array_like, optional
        Explicit combined cost ``(M_R, M_s, M_p)``; overrides the default
        combination ``c_m(s) + c_p(p) + c_r``.
    """

    env_cost: np.ndarray
    power_cost: np.ndarray
    rate_cost: np.ndarray
    joint_cost: np.ndarray = None

    def __post_init__(self):
        for name in ("env_cost", "power_cost", "rate_cost", "joint_cost"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.env_cost.ndim != 2:
            raise ValueError("env_cost must be (M_s, M_a)")

    def _rate(self, shape):
        rc = self.rate_cost
        if rc.ndim == 1:
            rc = rc[:, None, None]
        return np.broadcast_to(rc, shape)

    def env_marginal(self) -> np.ndarray:
        c = self.env_cost
        if np.any(np.abs(c - c[:, :1]) > 1e-12):
            raise ValueError("environment costs depend on the action; the state marginal is undefined")
        return c[:, 0].copy()

    def communication(self, shape) -> np.ndarray:
        """c_p(p) + c_r on the (rate, state, power) grid."""
        return self.power_cost[None, None, :] + self._rate(shape)

    def joint(self, shape) -> np.ndarray:
        """Combined cost c(r, s, p) on the (rate, state, power) grid."""
        if self.joint_cost is not None:
            return np.broadcast_to(self.joint_cost, shape).copy()
        return self.env_marginal()[None, :, None] + self.communication(shape)


@dataclass(frozen=True)
class OccupationMeasure:
    """Stationary joint measure ``table[r, s, p]``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim != 3:
            raise ValueError("occupation measure must be (M_R, M_s, M_p)")
        object.__setattr__(self, "table", t)

    @classmethod
    def from_vector(cls, x, shape):
        return cls(np.asarray(x, dtype=float)[: int(np.prod(shape))].reshape(shape))

    @property
    def shape(self):
        return self.table.shape

    def vector(self) -> np.ndarray:
        return self.table.reshape(-1)

    def rate_marginal(self) -> np.ndarray:
        return self.table.sum(axis=(1, 2))

    def state_marginal(self) -> np.ndarray:
        return self.table.sum(axis=(0, 2))

    def stationarity_residual(self, channel: SdMcChannel) -> float:
        Xr = self.rate_marginal()
        flow = np.einsum("ijsp,jsp->i", channel.transitions, self.table)
        return float(np.max(np.abs(Xr - flow)))

    def check(self, channel: SdMcChannel | None = None, *, tol_sum=1e-8, tol_flow=1e-7, tol_neg=1e-10):
        """Raise ValueError if a measure invariant is violated."""
        if np.any(self.table < -tol_neg):
            raise ValueError(f"negative occupation entry {self.table.min():.3g}")
        if abs(self.table.sum() - 1.0) > tol_sum:
            raise ValueError(f"occupation measure sums to {self.table.sum():.12g}")
        if channel is not None:
            res = self.stationarity_residual(channel)
            if res > tol_flow:
                raise ValueError(f"rate-stationarity residual {res:.3g}")
        return self

    def conditional(self) -> np.ndarray:
        """P(s, p | r) with uniform completion on zero-mass rates."""
        Xr = self.rate_marginal()
        out = np.empty_like(self.table)
        for j in range(self.shape[0]):
            if Xr[j] > 1e-14:
                out[j] = self.table[j] / Xr[j]
            else:
                out[j] = 1.0 / (self.shape[1] * self.shape[2])
        return out


def _coefficients(channel: SdMcChannel, form: str):
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    Mr, Ms, Mp = channel.n_rates, channel.n_states, channel.n_powers
    nx = Mr * Ms * Mp
    coef = np.zeros((Mr, Mr, Mr, Ms, Mp))  # (i, j, r-block, s, p)
    for i in range(Mr):
        for j in range(Mr):
            if form == "conditional":
                coef[i, j, j] = channel.transitions[i, j]
            else:
                coef[i, j, :] = channel.transitions[i, j][None]
    E = np.zeros((Mr, Mr, Ms, Mp))
    for j in range(Mr):
        E[j, j] = 1.0
    return coef.reshape(Mr, Mr, nx), E.reshape(Mr, nx)


def _stationarity_rows(channel: SdMcChannel):
    """Rows of sum_{s,p} X(r_i) - sum_{j,s,p} P_ij X(r_j, s, p) = 0."""
    Mr, Ms, Mp = channel.n_rates, channel.n_states, channel.n_powers
    rows = []
    for i in range(Mr):
        row = -channel.transitions[i].copy()  # (j, s, p)
        row[i] += 1.0
        rows.append(row.reshape(-1))
    return np.array(rows)


@dataclass
class CpopProblem:
    """Polynomial program over occupation measures (plus optional env variables).

    Variables are the flattened measure followed by ``n_extra`` environment
    occupation variables Y(s, a) when the environment extension is active.
    """

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    coef: np.ndarray
    E: np.ndarray
    thetas: np.ndarray
    shape: tuple
    form: str = "conditional"
    eq_labels: list = field(default_factory=list)
    n_extra: int = 0

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_x(self) -> int:
        return int(np.prod(self.shape))

    def constraint_values(self, x):
        x = np.asarray(x, dtype=float)
        X = x[..., : self.n_x]
        m = X @ self.E.T  # (..., M_R)
        u = np.einsum("ijn,...n->...ij", self.coef, X)
        Mr = m.shape[-1]
        prod_all = np.prod(m, axis=-1)
        h = -(self.thetas ** 2) * prod_all[..., None]
        for j in range(Mr):
            others = np.prod(np.delete(m, j, axis=-1), axis=-1) if Mr > 1 else np.ones(m.shape[:-1])
            h = h + u[..., :, j] * others[..., None]
        return h

    def constraint_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        X = x[: self.n_x]
        m = self.E @ X
        u = self.coef @ X  # (i, j)
        Mr = m.size

        def prod_except(skip):
            return float(np.prod([m[l] for l in range(Mr) if l not in skip]))

        J = np.zeros((Mr, self.n))
        for i in range(Mr):
            g = np.zeros(self.n_x)
            for j in range(Mr):
                g += self.coef[i, j] * prod_except({j})
                for k in range(Mr):
                    if k != j:
                        g += u[i, j] * prod_except({j, k}) * self.E[k]
            for k in range(Mr):
                g -= self.thetas[i] ** 2 * prod_except({k}) * self.E[k]
            J[i, : self.n_x] = g
        return J

    def measure(self, x) -> OccupationMeasure:
        return OccupationMeasure.from_vector(np.clip(np.asarray(x)[: self.n_x], 0.0, None), self.shape)


def _thetas(params: StabilityParams, lambda_bar: float, n_rates: int):
    if not 0 < lambda_bar < 1:
        raise ValueError("lambda_bar must lie in (0, 1)")
    lam = params.lambda_array
    if lam.size < n_rates:
        raise ValueError(f"{n_rates} rates but only {lam.size} lambdas")
    if lam.size != n_rates:
        raise ValueError(f"{lam.size} lambdas for {n_rates} rates")
    return lambda_bar / lam


def _env_block(channel: SdMcChannel, mdp: EnvMdp):
    """Extra equality rows and labels linking Y(s, a) to the measure."""
    Mr, Ms, Mp = channel.n_rates, channel.n_states, channel.n_powers
    if mdp.n_states != Ms:
        raise ValueError("MDP and channel disagree on the number of environment states")
    nx, ny = Mr * Ms * Mp, Ms * mdp.n_actions
    flow = control_lp_problem(mdp, np.full(Ms, 1.0 / Ms)).A_eq[:Ms]  # flow-balance rows over Y
    rows, labels = [], []
    for s in range(Ms):
        rows.append(np.concatenate([np.zeros(nx), flow[s]]))
        labels.append(f"env-flow[{mdp.states[s]}]")
    for s in range(Ms):
        link = np.zeros((Mr, Ms, Mp))
        link[:, s, :] = -1.0
        ys = np.zeros((Ms, mdp.n_actions))
        ys[s] = 1.0
        rows.append(np.concatenate([link.reshape(-1), ys.reshape(-1)]))
        labels.append(f"env-link[{mdp.states[s]}]")
    return np.array(rows), labels, ny


def _base_equalities(channel: SdMcChannel):
    nx = channel.n_rates * channel.n_states * channel.n_powers
    stat = _stationarity_rows(channel)
    A = np.vstack([stat[:-1], np.ones((1, nx))]) if channel.n_rates > 1 else np.ones((1, nx))
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    labels = [f"rate-stationarity[{k}]" for k in range(channel.n_rates - 1)] + ["normalization"]
    return A, b, labels


def _assemble(channel, objective, mdp, env_marginal):
    A, b, labels = _base_equalities(channel)
    nx = A.shape[1]
    n_extra = 0
    if mdp is not None:
        rows, lab, n_extra = _env_block(channel, mdp)
        A = np.hstack([A, np.zeros((A.shape[0], n_extra))])
        A = np.vstack([A, rows])
        b = np.concatenate([b, np.zeros(rows.shape[0])])
        labels += lab
    if env_marginal is not None:
        env_marginal = np.asarray(env_marginal, dtype=float)
        Mr, Ms, Mp = channel.n_rates, channel.n_states, channel.n_powers
        for s in range(Ms):
            row = np.zeros((Mr, Ms, Mp))
            row[:, s, :] = 1.0
            A = np.vstack([A, np.concatenate([row.reshape(-1), np.zeros(n_extra)])])
            b = np.append(b, env_marginal[s])
            labels.append(f"env-marginal[{channel.env_states[s]}]")
    c = np.concatenate([np.asarray(objective, dtype=float).reshape(-1), np.zeros(n_extra)])
    return c, A, b, labels, n_extra


def build_cpop(channel: SdMcChannel, costs: CostModel, params: StabilityParams, lambda_bar: float, *,
               form: str = "conditional", mdp: EnvMdp | None = None, env_marginal=None,
               objective=None) -> CpopProblem:
    """Co-design polynomial program.

    Parameters
    ----------
    form : {"conditional", "marginal"}
        Reading of the stability polynomials (see module docstring).
    mdp : EnvMdp, optional
        Adds environment occupation variables so the state marginal of the
        measure is realizable by a stationary environment policy.
    env_marginal : array_like, optional
        Pins the state marginal (used by the separation baseline).
    objective : array_like, optional
        Overrides the joint cost on the (rate, state, power) grid.
    """
    shape = channel.shape[1:]
    thetas = _thetas(params, lambda_bar, channel.n_rates)
    coef, E = _coefficients(channel, form)
    obj = costs.joint(shape) if objective is None else objective
    c, A, b, labels, n_extra = _assemble(channel, obj, mdp, env_marginal)
    return CpopProblem(c=c, A_eq=A, b_eq=b, coef=coef, E=E, thetas=thetas, shape=shape, form=form,
                       eq_labels=labels, n_extra=n_extra)


def eval_stability_polynomials(problem: CpopProblem, X) -> np.ndarray:
    """Values h_1 .. h_{M_R}; feasible when all are <= 0."""
    x = X.vector() if isinstance(X, OccupationMeasure) else np.asarray(X, dtype=float).reshape(-1)
    if x.size == problem.n_x and problem.n_extra:
        x = np.concatenate([x, np.zeros(problem.n_extra)])
    return problem.constraint_values(x)


def two_state_quadratic_forms(channel: SdMcChannel, thetas, *, form: str = "conditional"):
    """Symmetric Q_1, Q_2 with X' Q_i X = h_i(X) for two-rate channels."""
    if channel.n_rates != 2:
        raise ValueError("quadratic forms are defined for exactly two rates")
    thetas = np.asarray(thetas, dtype=float)
    coef, E = _coefficients(channel, form)
    e1, e2 = E[0], E[1]
    out = []
    for i in range(2):
        M = np.outer(coef[i, 0], e2) + np.outer(coef[i, 1], e1) - thetas[i] ** 2 * np.outer(e1, e2)
        out.append(0.5 * (M + M.T))
    return out


def to_qcqp(problem: CpopProblem) -> QcqpProblem:
    """Quadratic program with the same feasible set (two-rate problems only)."""
    Mr = problem.E.shape[0]
    if Mr != 2:
        raise ValueError("only two-rate programs are quadratic")
    n, nx = problem.n, problem.n_x
    coef, E = problem.coef, problem.E
    Q = np.zeros((2, n, n))
    for i in range(2):
        M = np.outer(coef[i, 0], E[1]) + np.outer(coef[i, 1], E[0]) - problem.thetas[i] ** 2 * np.outer(E[0], E[1])
        Q[i, :nx, :nx] = 0.5 * (M + M.T)
    return QcqpProblem(c=problem.c, A_eq=problem.A_eq, b_eq=problem.b_eq, Q=Q)


def build_lp_relaxation(channel: SdMcChannel, costs: CostModel, params: StabilityParams, lambda_bar: float,
                        bound_form: str = "proof", *, mdp: EnvMdp | None = None, env_marginal=None,
                        objective=None) -> LpProblem:
    """Linear program with the column-sum stability constraints.

    For every rate j: ``sum_i lambda_i^2 sum_{s,p} P_ij(s,p) X(s, r_j, p) <= beta X(r_j)``
    with ``beta = (lambda_bar / M_R)^2`` (``proof``) or ``lambda_bar^2 / M_R`` (``theorem``).
    """
    if bound_form not in BOUND_FORMS:
        raise ValueError(f"bound_form must be one of {BOUND_FORMS}")
    _thetas(params, lambda_bar, channel.n_rates)
    Mr, Ms, Mp = channel.shape[1:]
    beta = (lambda_bar / Mr) ** 2 if bound_form == "proof" else lambda_bar ** 2 / Mr
    lam2 = params.lambda_array ** 2
    obj = costs.joint(channel.shape[1:]) if objective is None else objective
    c, A, b, _, n_extra = _assemble(channel, obj, mdp, env_marginal)
    rows = []
    for j in range(Mr):
        row = np.zeros((Mr, Ms, Mp))
        row[j] = np.einsum("i,isp->sp", lam2, channel.transitions[:, j]) - beta
        rows.append(np.concatenate([row.reshape(-1), np.zeros(n_extra)]))
    return LpProblem(c=c, A_eq=A, b_eq=b, A_in=np.array(rows), b_in=np.zeros(Mr))


@dataclass
class PolicySet:
    """Power policy P(p | r), state distribution P(s) and zero-mass flags."""

    power: np.ndarray
    env_distribution: np.ndarray
    zero_mass_rates: list
    power_by_state: np.ndarray = None
    control: ControlPolicy = None


def extract_policies(X: OccupationMeasure) -> PolicySet:
    """P(p | r) from the measure (uniform on zero-mass rates) and P(s)."""
    t = X.table
    Mr, Ms, Mp = t.shape
    per_rp = t.sum(axis=1)  # (r, p)
    tot = per_rp.sum(axis=1)
    power = np.empty((Mr, Mp))
    zero = []
    for r in range(Mr):
        if tot[r] > 1e-14:
            power[r] = per_rp[r] / tot[r]
        else:
            power[r] = 1.0 / Mp
            zero.append(r)
    by_state = np.empty((Mr, Ms, Mp))
    for r in range(Mr):
        for s in range(Ms):
            m = t[r, s].sum()
            by_state[r, s] = t[r, s] / m if m > 1e-14 else power[r]
    env = t.sum(axis=(0, 2))
    return PolicySet(power=power, env_distribution=env, zero_mass_rates=zero, power_by_state=by_state)


def joint_average_cost(X: OccupationMeasure, costs: CostModel) -> float:
    """Inner product of the measure with the combined cost."""
    return float(np.sum(X.table * costs.joint(X.shape)))


def occupation_from_policies(channel: SdMcChannel, mdp: EnvMdp, control: ControlPolicy, power) -> OccupationMeasure:
    """Stationary (rate, state, power) measure generated by stationary policies.

    ``power`` is P(p | r) with shape (M_R, M_p) or P(p | r, s) with shape
    (M_R, M_s, M_p).
    """
    Mr, Ms, Mp = channel.shape[1:]
    pw = np.asarray(power, dtype=float)
    if pw.ndim == 2:
        pw = np.broadcast_to(pw[:, None, :], (Mr, Ms, Mp))
    ctrl = control.table if isinstance(control, ControlPolicy) else np.asarray(control, dtype=float)
    env_step = np.einsum("tua,ua->tu", mdp.transitions, ctrl)  # (s', s)
    rate_step = np.einsum("ijsp,jsp->ijs", channel.transitions, pw)  # (r', r, s)
    # joint chain over (s, r), flattened s-major
    T = np.einsum("ts,ijs->tisj", env_step, rate_step).reshape(Ms * Mr, Ms * Mr)
    pi = stationary_distribution(T).reshape(Ms, Mr)
    X = np.einsum("sr,rsp->rsp", pi, pw)
    return OccupationMeasure(X)


@dataclass
class CodesignResult:
    method: str
    status: Status
    cost: float
    measure: OccupationMeasure | None
    policies: PolicySet | None
    solution: object = None
    notes: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.measure is not None


def _finish_result(method, sol, problem_shape, channel, costs, mdp, notes):
    if not sol.ok:
        return CodesignResult(method, sol.status, math.nan, None, None, sol, notes)
    X = OccupationMeasure.from_vector(np.clip(sol.x, 0.0, None), problem_shape)
    X.check(channel)
    pol = extract_policies(X)
    if mdp is not None:
        try:
            pol.control = solve_control_lp(mdp, pol.env_distribution / pol.env_distribution.sum()).policy
        except InfeasibleError as exc:
            notes.append(f"environment distribution not realizable: {exc}")
    return CodesignResult(method, sol.status, joint_average_cost(X, costs), X, pol, sol, notes)


def solve_codesign(channel: SdMcChannel, costs: CostModel, params: StabilityParams, lambda_bar: float, *,
                   method: str = "qcqp", bound_form: str = "proof", form: str = "conditional",
                   mdp: EnvMdp | None = None, env_marginal=None, objective=None, starts=(),
                   n_random: int = 8, seed: int = 0, grid_resolution: float = 0.02) -> CodesignResult:
    """Run one co-design route.

    ``method`` is ``lp``, ``qcqp`` (barrier if the PSD gate passes, otherwise
    the local solver), ``local`` or ``grid``.  The LP relaxation is always
    solved first; when feasible it seeds the nonlinear routes.
    """
    shape = channel.shape[1:]
    kw = dict(mdp=mdp, env_marginal=env_marginal, objective=objective)
    lp = build_lp_relaxation(channel, costs, params, lambda_bar, bound_form, **kw)
    lp_sol = solve_lp(lp)
    notes = []
    if method == "lp":
        return _finish_result("lp", lp_sol, shape, channel, costs, mdp, notes)
    cpop = build_cpop(channel, costs, params, lambda_bar, form=form, **kw)
    if method == "grid":
        return _finish_result("grid", grid_oracle(cpop, grid_resolution), shape, channel, costs, mdp, notes)
    seeds = [np.asarray(s, dtype=float) for s in starts]
    if lp_sol.ok:
        seeds.insert(0, lp_sol.x)
    if method == "qcqp":
        if channel.n_rates == 2:
            try:
                sol = solve_convex_qcqp(to_qcqp(cpop))
                return _finish_result("qcqp", sol, shape, channel, costs, mdp, notes)
            except NotConvexError:
                notes.append("PSD gate failed; solved with the local polynomial solver")
        else:
            notes.append("more than two rates; solved with the local polynomial solver")
    elif method != "local":
        raise ValueError(f"unknown method {method!r}")
    all_starts = seeds + default_starts(cpop, n_random=n_random, seed=seed)
    sol = solve_cpop_local(cpop, all_starts)
    return _finish_result("local" if method == "local" else "qcqp", sol, shape, channel, costs, mdp, notes)


def psd_gate(channel: SdMcChannel, params: StabilityParams, lambda_bar: float, form="conditional", tol=1e-9):
    """Per-constraint PSD verdicts for the two-rate quadratic forms."""
    Q = two_state_quadratic_forms(channel, _thetas(params, lambda_bar, channel.n_rates), form=form)
    return [is_psd(q, tol) for q in Q]


def env_policy_min_cost(mdp: EnvMdp):
    """Average-cost optimal stationary environment policy, ignoring the channel."""
    A = control_lp_problem(mdp, np.full(mdp.n_states, 1.0 / mdp.n_states))
    Ms = mdp.n_states
    sol = solve_lp(LpProblem(c=A.c, A_eq=A.A_eq[: Ms + 1], b_eq=A.b_eq[: Ms + 1]))
    if not sol.ok:
        raise RuntimeError("environment cost LP failed")
    Y = sol.x.reshape(Ms, mdp.n_actions)
    policy = extract_control_policy(Y)
    return policy, Y.sum(axis=1), float(sol.objective)


def separation_baseline(channel: SdMcChannel, costs: CostModel, params: StabilityParams, lambda_bar: float,
                        mdp: EnvMdp, *, method: str = "qcqp", form: str = "conditional", bound_form="proof",
                        seed: int = 0) -> CodesignResult:
    """Environment policy for c_m alone, then power policy for c_p + c_r under stability.

    The returned cost is the full joint cost of the resulting measure; an
    infeasible stability program yields ``feasible == False``.
    """
    control, env_dist, _ = env_policy_min_cost(mdp)
    comm = costs.communication(channel.shape[1:])
    res = solve_codesign(channel, costs, params, lambda_bar, method=method, form=form, bound_form=bound_form,
                         env_marginal=env_dist, objective=comm, seed=seed)
    res.notes.append(f"environment marginal fixed at {np.round(env_dist, 12).tolist()}")
    if res.feasible:
        res.cost = joint_average_cost(res.measure, costs)
        res.policies.control = control
    res.method = "separation"
    return res


SWEEP_COLUMNS = [
    "fading_level", "cost_codesign_qcqp", "cost_codesign_lp", "cost_separation",
    "p_low_given_r0", "p_low_given_r2", "p_stay_given_s1", "p_stay_given_s2", "feasible_flag",
]


def fading_channel(channel: SdMcChannel, level: float, *, rate=0, state=0, power=None) -> SdMcChannel:
    """Channel with P(r_rate | r_rate, state, power) set to ``level``.

    The remaining mass goes to the other rate (two-rate channels).  The
    power index defaults to the highest level.
    """
    if channel.n_rates != 2:
        raise ValueError("the fading sweep is defined for two-rate channels")
    p = channel.n_powers - 1 if power is None else power
    col = np.zeros(2)
    col[rate] = level
    col[1 - rate] = 1.0 - level
    return channel.with_column(rate, state, p, col)


def _sweep_point(args):
    level, channel, costs, params, lambda_bar, mdp, bound_form, form, seed, stay_index = args
    ch = fading_channel(channel, level)
    sep = separation_baseline(ch, costs, params, lambda_bar, mdp, form=form, bound_form=bound_form, seed=seed)
    lp = solve_codesign(ch, costs, params, lambda_bar, method="lp", bound_form=bound_form, form=form, mdp=mdp)
    extra = [sep.solution.x] if sep.feasible else []
    if sep.feasible:
        # lift the separation measure into the environment-extended space
        Ms = ch.n_states
        Y = sep.policies.env_distribution[:, None] * sep.policies.control.table
        extra = [np.concatenate([sep.measure.vector(), Y.reshape(-1)])]
        if lp.feasible:
            extra.append(lp.solution.x)
    co = solve_codesign(ch, costs, params, lambda_bar, method="qcqp", bound_form=bound_form, form=form, mdp=mdp,
                        starts=extra, seed=seed)
    row = {c: math.nan for c in SWEEP_COLUMNS}
    row["fading_level"] = level
    row["cost_codesign_qcqp"] = co.cost
    row["cost_codesign_lp"] = lp.cost
    row["cost_separation"] = sep.cost
    if co.feasible:
        row["p_low_given_r0"] = co.policies.power[0, 0]
        row["p_low_given_r2"] = co.policies.power[-1, 0]
        if co.policies.control is not None:
            row["p_stay_given_s1"] = co.policies.control.table[0, stay_index]
            row["p_stay_given_s2"] = co.policies.control.table[1, stay_index]
    row["feasible_flag"] = int(co.feasible)
    return row


def fading_sweep(channel: SdMcChannel, costs: CostModel, params: StabilityParams, lambda_bar: float,
                 mdp: EnvMdp, levels, *, bound_form: str = "proof", form: str = "conditional", seed: int = 0,
                 workers: int = 1, stay_action: str = "Stay") -> list:
    """Co-design, LP and separation costs across shadow-fading levels.

    Independent levels may be dispatched to ``workers`` processes; rows come
    back ordered by fading level.
    """
    stay_index = mdp.actions.index(stay_action) if stay_action in mdp.actions else 0
    jobs = [(float(l), channel, costs, params, lambda_bar, mdp, bound_form, form, seed, stay_index) for l in levels]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    return sorted(rows, key=lambda r: r["fading_level"])


def fmt(value) -> str:
    """Ten-significant-digit rendering used for every CSV number."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.10g" % v


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != SWEEP_COLUMNS:
            raise ValueError(f"unexpected sweep header {header}")
        rows = []
        for rec in rd:
            row = {k: float(v) for k, v in zip(header, rec)}
            row["feasible_flag"] = int(row["feasible_flag"])
            rows.append(row)
    return rows
