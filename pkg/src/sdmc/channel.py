"""State-dependent Markov channels.

The transition tensor is stored next-rate first: ``P[i, j, s, p]`` is the
probability of moving to rate ``i`` from rate ``j`` while the environment is
in state ``s`` and power level ``p`` is used.  Every ``P[:, j, s, p]`` slice
is a probability vector, so induced rate matrices are column-stochastic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

STOCH_TOL = 1e-9


class FadingModelError(ValueError):
    """The fading approximation left its validity regime."""


class StationaryError(RuntimeError):
    """No unique stationary distribution could be computed."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


def _labels(values, prefix, n):
    if values is None:
        return tuple(f"{prefix}{k + 1}" for k in range(n))
    return tuple(str(v) for v in values)


@dataclass(frozen=True)
class SdMcChannel:
    """Rate chain whose transitions depend on environment state and power.

    Parameters
    ----------
    rates : sequence of float
        Data rates (bits per sample), expected ascending.
    transitions : array_like, shape (M_R, M_R, M_s, M_p)
        ``transitions[i, j, s, p]`` = P(next rate i | rate j, state s, power p).
    env_states, powers : sequence of str, optional
        Labels; default ``s1, s2, ...`` and ``p1, p2, ...``.
    """

    rates: np.ndarray
    transitions: np.ndarray
    env_states: tuple = None
    powers: tuple = None

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        P = np.asarray(self.transitions, dtype=float)
        if P.ndim == 2:
            P = P[:, :, None, None]
        if P.ndim != 4 or P.shape[0] != P.shape[1] or P.shape[0] != rates.size:
            raise ValueError(f"transition tensor of shape {P.shape} does not match {rates.size} rates")
        P = P.copy()
        P.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "env_states", _labels(self.env_states, "s", P.shape[2]))
        object.__setattr__(self, "powers", _labels(self.powers, "p", P.shape[3]))
        if len(self.env_states) != P.shape[2] or len(self.powers) != P.shape[3]:
            raise ValueError("label counts do not match the transition tensor")

    @property
    def n_rates(self) -> int:
        return self.rates.size

    @property
    def n_states(self) -> int:
        return self.transitions.shape[2]

    @property
    def n_powers(self) -> int:
        return self.transitions.shape[3]

    @property
    def shape(self):
        return self.transitions.shape

    def column(self, j: int, s: int, p: int) -> np.ndarray:
        return self.transitions[:, j, s, p]

    def with_column(self, j: int, s: int, p: int, column) -> "SdMcChannel":
        """Copy of the channel with one next-rate distribution replaced."""
        P = np.array(self.transitions)
        P[:, j, s, p] = np.asarray(column, dtype=float)
        return SdMcChannel(self.rates, P, self.env_states, self.powers)

    def validate(self) -> "ValidationReport":
        return validate_channel(self)

    @classmethod
    def from_rate_matrix(cls, rates, matrix) -> "SdMcChannel":
        """Single-state, single-power channel with a fixed rate matrix."""
        return cls(rates, np.asarray(matrix, dtype=float)[:, :, None, None])


@dataclass(frozen=True)
class Violation:
    kind: str
    index: tuple
    message: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind, index, message):
        self.violations.append(Violation(kind, tuple(index), message))

    def __str__(self):
        if self.ok:
            return "valid"
        return "\n".join(f"{v.kind} at {v.index}: {v.message}" for v in self.violations)


def validate_channel(channel: SdMcChannel) -> ValidationReport:
    """List every violated channel invariant; never raises."""
    rep = ValidationReport()
    r = channel.rates
    if r.size < 1:
        rep.add("dimension", (), "at least one rate is required")
    for k in range(r.size - 1):
        if not r[k] < r[k + 1]:
            rep.add("ordering", (k, k + 1), f"rates {r[k]:g} and {r[k + 1]:g} are not strictly ascending")
    P = channel.transitions
    if not np.all(np.isfinite(P)):
        rep.add("finite", (), "transition tensor has non-finite entries")
    bad = np.argwhere((P < 0) | (P > 1))
    for i, j, s, p in bad:
        rep.add("range", (int(i), int(j), int(s), int(p)), f"probability {P[i, j, s, p]:g} outside [0, 1]")
    sums = P.sum(axis=0)
    for j, s, p in np.argwhere(np.abs(sums - 1.0) > STOCH_TOL):
        rep.add("stochastic", (int(j), int(s), int(p)),
                f"slice (rate {j}, state {channel.env_states[s]}, power {channel.powers[p]}) sums to {sums[j, s, p]:.12g}")
    return rep


@dataclass(frozen=True)
class FadingSpec:
    """Rayleigh (exponential SNR) fading description.

    Parameters
    ----------
    power_levels : sequence of float
        Transmit power per power label (ascending).
    shadowing : sequence of float
        Shadowing factor phi(s) in [0, 1] per environment state.
    noise_density, bandwidth : float
        N0 (W/Hz) and B (Hz).
    snr_thresholds : sequence of float
        Ascending linear-SNR thresholds, one more than the number of rates;
        the last may be ``inf``.
    doppler : float
        Maximum Doppler frequency f_D (Hz).
    packet_period : float
        Packet duration T_p (s).
    rates : sequence of float, optional
        Rate values; defaults to 0, 1, 2, ...
    """

    power_levels: Sequence[float]
    shadowing: Sequence[float]
    noise_density: float
    bandwidth: float
    snr_thresholds: Sequence[float]
    doppler: float
    packet_period: float
    rates: Sequence[float] = None
    env_states: tuple = None
    powers: tuple = None

    def __post_init__(self):
        pw = np.asarray(self.power_levels, dtype=float).reshape(-1)
        ph = np.asarray(self.shadowing, dtype=float).reshape(-1)
        th = np.asarray(self.snr_thresholds, dtype=float).reshape(-1)
        if th.size < 2:
            raise ValueError("need at least two SNR thresholds")
        if th[0] < 0 or np.any(np.diff(th) <= 0):
            raise ValueError("SNR thresholds must be nonnegative and strictly ascending")
        if np.any(np.isinf(th[:-1])) or np.any(np.isnan(th)):
            raise ValueError("only the last SNR threshold may be infinite")
        if np.any((ph < 0) | (ph > 1)):
            raise ValueError("shadowing factors must lie in [0, 1]")
        if np.any(pw <= 0):
            raise ValueError("power levels must be positive")
        if not self.noise_density * self.bandwidth > 0:
            raise ValueError("N0 * B must be positive")
        if not self.doppler > 0 or not self.packet_period > 0:
            raise ValueError("Doppler frequency and packet period must be positive")
        rates = np.arange(th.size - 1, dtype=float) if self.rates is None else np.asarray(self.rates, dtype=float)
        if rates.size != th.size - 1:
            raise ValueError("number of rates must be one less than the number of thresholds")
        object.__setattr__(self, "power_levels", pw)
        object.__setattr__(self, "shadowing", ph)
        object.__setattr__(self, "snr_thresholds", th)
        object.__setattr__(self, "rates", rates)

    def mean_snr(self) -> np.ndarray:
        """Average SNR per (state, power), shape (M_s, M_p)."""
        return np.outer(self.shadowing, self.power_levels) / (self.noise_density * self.bandwidth)


def _exp_neg(gamma, gbar):
    return 0.0 if math.isinf(gamma) else math.exp(-gamma / gbar)


def fading_stats(thresholds, gbar, doppler):
    """Steady-state probabilities pi_i and level-crossing rates N_i."""
    th = np.asarray(thresholds, dtype=float)
    e = np.array([_exp_neg(g, gbar) for g in th])
    pi = e[:-1] - e[1:]
    N = np.array([0.0 if math.isinf(g) else math.sqrt(2 * math.pi * g / gbar) * doppler * math.exp(-g / gbar)
                  for g in th])
    return pi, N


def channel_from_fading(spec: FadingSpec) -> SdMcChannel:
    """Tridiagonal rate chain from the level-crossing approximation."""
    th = spec.snr_thresholds
    M = th.size - 1
    gbar_all = spec.mean_snr()
    Ms, Mp = gbar_all.shape
    P = np.zeros((M, M, Ms, Mp))
    problems = []
    for s in range(Ms):
        for p in range(Mp):
            gbar = gbar_all[s, p]
            if gbar <= 0:
                problems.append(f"(s={s}, p={p}): mean SNR is zero")
                continue
            pi, N = fading_stats(th, gbar, spec.doppler)
            for i in range(M):
                if pi[i] <= 0:
                    problems.append(f"(s={s}, p={p}, i={i}): state probability underflows to {pi[i]:g}")
                    continue
                up = N[i + 1] * spec.packet_period / pi[i] if i + 1 < M else 0.0
                down = N[i] * spec.packet_period / pi[i] if i > 0 else 0.0
                stay = 1.0 - up - down
                if up > 1 or down > 1 or stay < 0:
                    problems.append(
                        f"(s={s}, p={p}, i={i}): up={up:.6g}, down={down:.6g}, stay={stay:.6g}; "
                        "packet period too long for the fading speed")
                    continue
                P[i, i, s, p] = stay
                if i + 1 < M:
                    P[i + 1, i, s, p] = up
                if i > 0:
                    P[i - 1, i, s, p] = down
    if problems:
        raise FadingModelError("fading approximation invalid:\n" + "\n".join(problems))
    return SdMcChannel(spec.rates, P, spec.env_states, spec.powers)


@dataclass(frozen=True)
class JointConditional:
    """Per-rate distributions over (state, power): ``table[j, s, p]``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim != 3:
            raise ValueError("conditional table must have shape (M_R, M_s, M_p)")
        if np.any(t < 0):
            raise ValueError("conditional probabilities must be nonnegative")
        sums = t.sum(axis=(1, 2))
        bad = np.flatnonzero(np.abs(sums - 1.0) > STOCH_TOL)
        if bad.size:
            raise ValueError(f"conditional for rate index {int(bad[0])} sums to {sums[bad[0]]:.12g}")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def uniform(cls, n_rates, n_states, n_powers):
        return cls(np.full((n_rates, n_states, n_powers), 1.0 / (n_states * n_powers)))


def induced_rate_chain(channel: SdMcChannel, cond: JointConditional) -> np.ndarray:
    """Rate transition matrix averaged over the (state, power) conditional."""
    t = cond.table if isinstance(cond, JointConditional) else np.asarray(cond, dtype=float)
    if t.shape != (channel.n_rates, channel.n_states, channel.n_powers):
        raise ValueError(f"conditional shape {t.shape} does not match channel {channel.shape[1:]}")
    return np.einsum("ijsp,jsp->ij", channel.transitions, t)


def stationary_distribution(matrix, *, tol: float = 1e-13, max_iter: int = 200_000) -> np.ndarray:
    """Stationary vector of a column-stochastic matrix by power iteration.

    Raises
    ------
    StationaryError
        When the chain has more than one closed class, or the iteration does
        not settle (periodic chains) within ``max_iter`` steps.
    """
    P = np.asarray(matrix, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n):
        raise ValueError("matrix must be square")
    if np.any(np.abs(P.sum(axis=0) - 1.0) > STOCH_TOL) or np.any(P < -1e-15):
        raise ValueError("matrix must be column-stochastic")
    adj = (P.T > 0).astype(int)  # edge j -> i
    ncomp, lab = connected_components(adj, directed=True, connection="strong")
    closed = 0
    for c in range(ncomp):
        members = lab == c
        leaving = adj[np.ix_(members, ~members)].any()
        if not leaving:
            closed += 1
    if closed > 1:
        raise StationaryError(f"chain has {closed} closed classes; stationary distribution is not unique")
    pi = np.full(n, 1.0 / n)
    res = np.inf
    for _ in range(max_iter):
        nxt = P @ pi
        nxt /= nxt.sum()
        res = float(np.max(np.abs(nxt - pi)))
        pi = nxt
        if res <= tol:
            break
    res = float(np.max(np.abs(P @ pi - pi)))
    if res > 1e-10:
        raise StationaryError(f"power iteration did not converge (residual {res:.3g})", residual=res)
    return pi
