"""Monte Carlo simulation of the sampled, quantized closed loop over a state-dependent channel.

Between transmissions the plant, the estimator copy and the quantizer box
evolve continuously::

    x'  = A x + B K xh
    xh' = (A + B K) xh
    xi' = |A|_inf xi

At each transmission the environment action, the power level and the next
rate are drawn, and the estimator is reset by a zoom quantizer using the
realized rate as the per-dimension bit budget.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _core
from ._core._pycore import quantize as _quantize_batch
from .channel import SdMcChannel
from .environment import ControlPolicy, EnvMdp

DEFAULT_BLOWUP_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class RangeError(ValueError):
    """A search interval does not bracket the stability transition."""


@dataclass(frozen=True)
class PlantConfig:
    """LTI plant, feedback gain and initial conditions.

    Parameters
    ----------
    A : (n, n) array
    B : (n, m) array
    K : (m, n) array
    x0, xhat0 : (n,) arrays
    xi0 : float
        Initial quantizer box half-width, positive.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    x0: np.ndarray
    xhat0: np.ndarray = None
    xi0: float = 2.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        K = np.asarray(self.K, dtype=float).reshape(B.shape[1], n)
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        xh = np.zeros(n) if self.xhat0 is None else np.asarray(self.xhat0, dtype=float).reshape(-1)
        if x0.size != n or xh.size != n:
            raise ValueError("initial states must have the plant dimension")
        if not self.xi0 > 0:
            raise ValueError("xi0 must be positive")
        for name, val in (("A", A), ("B", B), ("K", K), ("x0", x0), ("xhat0", xh)):
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "xi0", float(self.xi0))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def box_rate(self) -> float:
        """Growth rate of the box, the induced infinity norm of A."""
        return float(np.abs(self.A).sum(axis=1).max())

    def closed_loop_matrix(self) -> np.ndarray:
        """Generator of z = [x, xh]."""
        n = self.n
        BK = self.B @ self.K
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = self.A
        M[:n, n:] = BK
        M[n:, n:] = self.A + BK
        return M


@dataclass
class HybridState:
    """Plant, estimator, box, and the discrete channel/environment modes."""

    t: float
    x: np.ndarray
    xh: np.ndarray
    xi: float
    r: int = 0
    s: int = 0
    p: int = 0
    escapes: int = 0

    @property
    def error(self) -> np.ndarray:
        return self.x - self.xh


def _rk4_step_matrix(M, h):
    """Exact one-step map of classical RK4 applied to z' = M z."""
    n = M.shape[0]
    hM = h * M
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, 5):
        term = term @ hM / k
        out = out + term
    return out


def _rk4_schedule(T, dt):
    if not 0 < dt <= T:
        raise ValueError("need 0 < dt <= T")
    n_full = int(math.floor(T / dt + 1e-9))
    rest = T - n_full * dt
    if rest <= 1e-12 * T:
        rest = 0.0
    return n_full, rest


def rk4_propagator(M, T, dt) -> np.ndarray:
    """One-period transition matrix of fixed-step RK4 (final partial step shortened)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n_full, rest = _rk4_schedule(T, dt)
    Phi = np.linalg.matrix_power(_rk4_step_matrix(M, dt), n_full)
    if rest > 0:
        Phi = _rk4_step_matrix(M, rest) @ Phi
    return Phi


def step_continuous(state: HybridState, plant: PlantConfig, T: float, dt: float | None = None) -> HybridState:
    """Integrate the flow over ``[t, t + T]`` with fixed-step RK4.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite; carries the time of the failing step.
    """
    dt = T / 100.0 if dt is None else dt
    n_full, rest = _rk4_schedule(T, dt)
    M = plant.closed_loop_matrix()
    a = plant.box_rate
    z = np.concatenate([state.x, state.xh]).astype(float)
    xi = float(state.xi)
    t = state.t
    steps = [dt] * n_full + ([rest] if rest > 0 else [])
    for h in steps:
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = M @ z
            k2 = M @ (z + 0.5 * h * k1)
            k3 = M @ (z + 0.5 * h * k2)
            k4 = M @ (z + h * k3)
            z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        g1 = a * xi
        g2 = a * (xi + 0.5 * h * g1)
        g3 = a * (xi + 0.5 * h * g2)
        g4 = a * (xi + h * g3)
        xi = xi + h / 6.0 * (g1 + 2 * g2 + 2 * g3 + g4)
        t += h
        if not (np.all(np.isfinite(z)) and math.isfinite(xi)):
            raise DivergenceError(f"state diverged at t = {t:.6g} s", t)
    n = plant.n
    return replace(state, t=t, x=z[:n], xh=z[n:], xi=xi)


def quantizer_jump(state: HybridState, bits: int) -> HybridState:
    """Zoom-quantizer reset with ``bits`` bits per dimension.

    An escaped state (error outside the box) first widens the box to twice the
    error norm and increments the escape counter.
    """
    if bits < 0 or int(bits) != bits:
        raise ValueError("bit count must be a nonnegative integer")
    xh, xi, esc = _quantize_batch(state.x[None, :], state.xh[None, :], np.array([state.xi]),
                                  np.array([int(bits)]))
    return replace(state, xh=xh[0], xi=float(xi[0]), escapes=state.escapes + int(esc[0]))


def _draw(cdf, u):
    return int(min(np.searchsorted(cdf, u, side="left"), cdf.size - 1))


def sample_next_rate(channel: SdMcChannel, r: int, s: int, p: int, rng) -> int:
    """Inverse-CDF draw from the next-rate distribution of (r, s, p)."""
    return _draw(np.cumsum(channel.column(r, s, p)), rng.random())


@dataclass(frozen=True)
class Policies:
    """Stationary environment-control and power policies.

    ``power`` is P(p | r) with shape (M_R, M_p) or P(p | r, s) with shape
    (M_R, M_s, M_p).
    """

    control: ControlPolicy
    power: np.ndarray

    def __post_init__(self):
        ctrl = self.control if isinstance(self.control, ControlPolicy) else ControlPolicy(self.control)
        pw = np.asarray(self.power, dtype=float)
        if pw.ndim not in (2, 3) or np.any(pw < -1e-12) or np.any(np.abs(pw.sum(axis=-1) - 1) > 1e-9):
            raise ValueError("power policy must be row-stochastic with shape (M_R, M_p) or (M_R, M_s, M_p)")
        object.__setattr__(self, "control", ctrl)
        object.__setattr__(self, "power", pw)

    def power_by_state(self, n_states):
        pw = self.power
        if pw.ndim == 2:
            pw = np.broadcast_to(pw[:, None, :], (pw.shape[0], n_states, pw.shape[1]))
        return np.ascontiguousarray(pw)


@dataclass(frozen=True)
class SimConfig:
    """Timing, Monte Carlo and verdict options."""

    T: float = 0.01
    horizon: float = 10.0
    dt: float | None = None
    runs: int = 1000
    seed: int = 0
    epsilon: float = 1e-2
    tail_window: float = 2.0
    stride: int = 1
    perturbation: float = 0.01
    blowup_factor: float = DEFAULT_BLOWUP_FACTOR
    xi_floor: float = 1e-300
    workers: int = 1

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.T))

    @property
    def step_dt(self) -> float:
        return self.T / 100.0 if self.dt is None else self.dt


@dataclass
class Trajectory:
    """Sampled run: times, norms, box size, modes and accumulated cost."""

    t: np.ndarray
    x_norm: np.ndarray
    e_norm: np.ndarray
    xi: np.ndarray
    rate: np.ndarray
    env_state: np.ndarray
    power: np.ndarray
    cum_cost: np.ndarray
    escapes: int = 0
    blowup_time: float | None = None

    COLUMNS = ("t", "x_norm", "e_norm", "xi", "rate", "env_state", "power", "cum_cost")


@dataclass
class Envelope:
    """Pointwise max/min of |x|_inf over a run set."""

    t: np.ndarray
    max_norm: np.ndarray
    min_norm: np.ndarray
    terminal: np.ndarray
    blowup_times: np.ndarray
    escapes: np.ndarray = field(default=None)

    COLUMNS = ("t", "max_norm", "min_norm")

    @property
    def runs(self) -> int:
        return self.terminal.size

    @property
    def diverged(self) -> int:
        return int(np.sum(np.isfinite(self.blowup_times)))


class _Kernel:
    """Precomputed tables shared by every run of one configuration."""

    def __init__(self, plant, channel, mdp, policies, costs, T, dt):
        Ms = channel.n_states
        if mdp.n_states != Ms:
            raise ValueError("MDP and channel disagree on the number of environment states")
        bits = np.asarray(channel.rates)
        if np.any(bits < 0) or np.any(bits != np.round(bits)):
            raise ValueError("rates must be nonnegative integer bit counts")
        self.bits = bits.astype(np.int64)
        self.Phi = np.ascontiguousarray(rk4_propagator(plant.closed_loop_matrix(), T, dt))
        self.xi_gain = float(rk4_propagator(np.array([[plant.box_rate]]), T, dt)[0, 0])
        P = np.moveaxis(np.asarray(channel.transitions), 0, -1)  # (j, s, p, i)
        self.cdf_P = np.ascontiguousarray(np.cumsum(P, axis=-1))
        q = np.moveaxis(np.asarray(mdp.transitions), 0, -1)  # (s', a, s)
        self.cdf_q = np.ascontiguousarray(np.cumsum(q, axis=-1))
        self.cdf_ctrl = np.ascontiguousarray(np.cumsum(policies.control.table, axis=-1))
        self.cdf_pow = np.ascontiguousarray(np.cumsum(policies.power_by_state(Ms), axis=-1))
        shape = channel.shape[1:]
        if costs is None:
            joint = np.zeros(shape)
        else:
            joint = costs.joint(shape)
        self.cost = np.ascontiguousarray(np.transpose(joint, (1, 2, 0)))
        self.s0 = int(mdp.initial_state)


def _run_inputs(plant, seeds, n_steps, perturbation):
    n = plant.n
    x0 = np.empty((len(seeds), n))
    U = np.empty((len(seeds), n_steps, 4))
    for k, sd in enumerate(seeds):
        rng = np.random.default_rng(int(sd))
        x0[k] = plant.x0 * (1.0 + perturbation * rng.uniform(-1.0, 1.0, n))
        U[k] = rng.random((n_steps, 4))
    return x0, U


def _simulate(kernel, plant, seeds, n_steps, perturbation, blowup, xi_floor, r0=0):
    x0, U = _run_inputs(plant, seeds, n_steps, perturbation)
    runs = len(seeds)
    xh0 = np.ascontiguousarray(np.broadcast_to(plant.xhat0, x0.shape))
    return _core.simulate_batch(
        kernel.Phi, kernel.xi_gain, np.ascontiguousarray(x0), xh0, np.full(runs, plant.xi0),
        np.full(runs, r0, dtype=np.int64), np.full(runs, kernel.s0, dtype=np.int64), kernel.bits,
        kernel.cdf_P, kernel.cdf_q, kernel.cdf_ctrl, kernel.cdf_pow, kernel.cost, U,
        float(blowup), float(xi_floor))


def run_trajectory(plant: PlantConfig, channel: SdMcChannel, mdp: EnvMdp, policies: Policies, T: float,
                   horizon: float, seed: int, *, costs=None, dt: float | None = None, stride: int = 1,
                   perturbation: float = 0.0, blowup_factor: float = DEFAULT_BLOWUP_FACTOR,
                   initial_rate: int = 0) -> Trajectory:
    """Single closed-loop run, fully determined by ``seed``.

    Per transmission the order of events is: environment action, power level,
    cost accrual, next rate, next environment state, quantizer jump with the
    new rate's bit count, then the flow over one period.  A run whose norm
    exceeds ``blowup_factor * |x0|_inf`` is stopped and its norms become
    ``inf`` from the blow-up time on.
    """
    dt = T / 100.0 if dt is None else dt
    kernel = _Kernel(plant, channel, mdp, policies, costs, T, dt)
    N = int(round(horizon / T))
    cap = blowup_factor * max(float(np.max(np.abs(plant.x0))), 1e-300)
    out = _simulate(kernel, plant, [seed], N, perturbation, cap, 1e-300, initial_rate)
    sl = slice(None, None, max(1, int(stride)))
    t = np.arange(N + 1) * T
    bs = int(out["blow_step"][0])
    return Trajectory(t=t[sl], x_norm=out["x_norm"][0, sl], e_norm=out["e_norm"][0, sl], xi=out["xi"][0, sl],
                      rate=out["rate"][0, sl], env_state=out["env"][0, sl], power=out["power"][0, sl],
                      cum_cost=out["cum_cost"][0, sl], escapes=int(out["escapes"][0]),
                      blowup_time=None if bs < 0 else bs * T)


def run_seeds(base_seed: int, runs: int):
    """Per-run seeds ``base_seed XOR run_index``."""
    return [int(base_seed) ^ k for k in range(runs)]


def monte_carlo(plant: PlantConfig, channel: SdMcChannel, mdp: EnvMdp, policies: Policies, sim: SimConfig, *,
                costs=None, base_seed: int | None = None, runs: int | None = None, T: float | None = None,
                horizon: float | None = None) -> Envelope:
    """Envelope of ``runs`` independent trajectories.

    Run ``k`` uses seed ``base_seed ^ k`` and equals
    ``run_trajectory(..., seed=base_seed ^ k, perturbation=sim.perturbation)``.
    Chunks of runs may execute on ``sim.workers`` threads; results are merged
    by run index, so the envelope does not depend on the worker count.
    """
    T = sim.T if T is None else T
    horizon = sim.horizon if horizon is None else horizon
    runs = sim.runs if runs is None else runs
    base_seed = sim.seed if base_seed is None else base_seed
    if runs < 1:
        raise ValueError("runs must be at least 1")
    dt = T / 100.0 if sim.dt is None else min(sim.dt, T)
    kernel = _Kernel(plant, channel, mdp, policies, costs, T, dt)
    N = int(round(horizon / T))
    cap = sim.blowup_factor * max(float(np.max(np.abs(plant.x0))), 1e-300)
    seeds = run_seeds(base_seed, runs)
    workers = max(1, int(sim.workers))
    chunks = [seeds[i::workers] for i in range(workers)] if workers > 1 else [seeds]
    chunks = [c for c in chunks if c]

    def job(chunk):
        return _simulate(kernel, plant, chunk, N, sim.perturbation, cap, sim.xi_floor)

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(chunks[0])]
    order = np.argsort(np.concatenate([np.array(c) for c in chunks]), kind="stable")
    xn = np.concatenate([p["x_norm"] for p in parts])[order]
    blow = np.concatenate([p["blow_step"] for p in parts])[order]
    esc = np.concatenate([p["escapes"] for p in parts])[order]
    t = np.arange(N + 1) * T
    sl = slice(None, None, max(1, int(sim.stride)))
    return Envelope(t=t[sl], max_norm=xn.max(axis=0)[sl], min_norm=xn.min(axis=0)[sl], terminal=xn[:, -1],
                    blowup_times=np.where(blow >= 0, blow * T, np.inf), escapes=esc)


@dataclass
class AsasVerdict:
    consistent: bool
    first_violation_time: float | None
    terminal_max: float

    @property
    def label(self) -> str:
        return "consistent-with-ASAS" if self.consistent else "violation-witnessed"

    def __str__(self):
        if self.consistent:
            return self.label
        return f"{self.label} at t = {self.first_violation_time:.6g} s"


def empirical_asas_check(envelope: Envelope, epsilon: float, tail_window: float,
                         terminal_threshold: float | None = None) -> AsasVerdict:
    """Falsification check of almost-sure asymptotic stability on a finite horizon.

    Consistent iff the max envelope stays below ``epsilon`` over the final
    ``tail_window`` seconds and the terminal max is below
    ``terminal_threshold`` (default ``epsilon``).  A diverged run is a
    violation at its blow-up time.
    """
    t = np.asarray(envelope.t)
    if t[-1] - t[0] <= tail_window:
        raise ValueError("envelope horizon must exceed the tail window")
    thr = epsilon if terminal_threshold is None else terminal_threshold
    mx = np.asarray(envelope.max_norm)
    term = float(mx[-1])
    blown = np.flatnonzero(~np.isfinite(mx))
    if blown.size:
        return AsasVerdict(False, float(t[blown[0]]), term)
    tail = t >= t[-1] - tail_window - 1e-12
    bad = np.flatnonzero(tail & (mx >= epsilon))
    if bad.size:
        return AsasVerdict(False, float(t[bad[0]]), term)
    if not term < thr:
        return AsasVerdict(False, float(t[-1]), term)
    return AsasVerdict(True, None, term)


def is_unbounded(envelope: Envelope, cap: float) -> bool:
    """Both the max and the min envelope exceed ``cap`` at some sample time."""
    return bool(np.any(envelope.max_norm > cap) and np.any(envelope.min_norm > cap))


@dataclass
class MatiSearchResult:
    mati: float
    stable_T: float
    unstable_T: float
    evaluations: list


def mati_search(plant: PlantConfig, channel: SdMcChannel, mdp: EnvMdp, policies: Policies, sim: SimConfig,
                t_low: float, t_high: float, *, runs: int | None = None, rel_tol: float = 1e-3,
                max_iter: int = 40) -> MatiSearchResult:
    """Empirical necessary MATI by bisection on the transmission interval.

    ``T`` counts as unstable when both envelopes exceed
    ``sim.blowup_factor * |x0|_inf`` within the horizon.  Returns the largest
    tested stable ``T`` and the final bracketing pair.

    Raises
    ------
    RangeError
        If ``t_low`` is already unstable or ``t_high`` is still stable.
    """
    if not 0 < t_low < t_high:
        raise ValueError("need 0 < t_low < t_high")
    cap = sim.blowup_factor * float(np.max(np.abs(plant.x0)))
    evals = []

    def unstable(T):
        env = monte_carlo(plant, channel, mdp, policies, sim, runs=runs, T=T)
        flag = is_unbounded(env, cap)
        evals.append((T, flag))
        return flag

    if unstable(t_low):
        raise RangeError(f"unstable already at the lower end T = {t_low:g} s")
    if not unstable(t_high):
        raise RangeError(f"still stable at the upper end T = {t_high:g} s")
    lo, hi = t_low, t_high
    for _ in range(max_iter):
        if hi - lo <= rel_tol * lo:
            break
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return MatiSearchResult(mati=lo, stable_T=lo, unstable_T=hi, evaluations=evals)


def simulate_cost_chain(channel: SdMcChannel, mdp: EnvMdp, policies: Policies, costs, n_steps: int, seed: int,
                        initial_rate: int = 0):
    """Average cost and empirical (s, r, p) frequencies of the mode chain alone."""
    kernel = _Kernel(PlantConfig(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), [1.0]),
                     channel, mdp, policies, costs, 1.0, 1.0)
    U = np.random.default_rng(seed).random((int(n_steps), 4))
    total, visits = _core.simulate_chain(kernel.cdf_P, kernel.cdf_q, kernel.cdf_ctrl, kernel.cdf_pow,
                                         kernel.cost, int(initial_rate), kernel.s0, U)
    return total / n_steps, visits / n_steps


def _fmt(v):
    from .codesign import fmt
    return fmt(v)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(Trajectory.COLUMNS)
        cols = [traj.t, traj.x_norm, traj.e_norm, traj.xi, traj.rate, traj.env_state, traj.power, traj.cum_cost]
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_trajectory_csv(path) -> Trajectory:
    data = _read_columns(path, Trajectory.COLUMNS)
    return Trajectory(t=data["t"], x_norm=data["x_norm"], e_norm=data["e_norm"], xi=data["xi"],
                      rate=data["rate"].astype(np.int64), env_state=data["env_state"].astype(np.int64),
                      power=data["power"].astype(np.int64), cum_cost=data["cum_cost"])


def write_envelope_csv(env: Envelope, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(Envelope.COLUMNS)
        for row in zip(env.t, env.max_norm, env.min_norm):
            w.writerow([_fmt(v) for v in row])


def read_envelope_csv(path) -> dict:
    return _read_columns(path, Envelope.COLUMNS)


def _read_columns(path, expected):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != tuple(expected):
            raise ValueError(f"unexpected header {header}")
        rows = [[float(v) for v in rec] for rec in rd]
    arr = np.array(rows, dtype=float).reshape(-1, len(expected))
    return {name: arr[:, k] for k, name in enumerate(expected)}
