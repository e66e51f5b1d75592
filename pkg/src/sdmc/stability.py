"""Contraction thresholds and maximum allowable transmission intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core

BRANCH_RTOL = 1e-12


@dataclass(frozen=True)
class StabilityParams:
    """Constants of the error-growth / jump-contraction assumption.

    Parameters
    ----------
    L : float
        Error growth rate (1/s), ``L >= 0``.
    zeta : float
        Coupling gain (1/s), ``zeta > 0``.
    lambdas : sequence of float
        Per-rate jump contraction factors, one per channel rate.
    quadratic_bounds : dict, optional
        Optional constants (``alpha_W_lower``, ``alpha_W_upper``,
        ``alpha_V_lower``, ``alpha_V_upper``, ``rho``) carried as metadata.
    quadratic_bounds_asserted : bool
        Whether the user asserts the quadratic bounds hold; never verified.
    """

    L: float
    zeta: float
    lambdas: tuple
    quadratic_bounds: dict = field(default_factory=dict)
    quadratic_bounds_asserted: bool = False

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        if not (self.L >= 0):
            raise ValueError("L must be nonnegative")
        if not (self.zeta > 0):
            raise ValueError("zeta must be positive")
        if not lam or any(not v > 0 for v in lam):
            raise ValueError("every lambda must be positive")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "zeta", float(self.zeta))
        object.__setattr__(self, "lambdas", lam)

    @property
    def lambda_array(self) -> np.ndarray:
        return np.asarray(self.lambdas)

    def header(self) -> str:
        state = "asserted by user" if self.quadratic_bounds_asserted else "not asserted"
        return f"# quadratic bounds: {state} (not verified by this toolkit)"


def _weighted(params: StabilityParams, rate_chain):
    P = np.asarray(rate_chain, dtype=float)
    lam = params.lambda_array
    if P.shape != (lam.size, lam.size):
        raise ValueError(f"rate matrix shape {P.shape} does not match {lam.size} lambdas")
    return np.abs((lam ** 2)[:, None] * P)


def lambda_bar_threshold_inf(params: StabilityParams, rate_chain) -> float:
    """sqrt of the max-row-sum norm of diag(lambda^2) P."""
    return float(math.sqrt(_weighted(params, rate_chain).sum(axis=1).max()))


def lambda_bar_threshold_one(params: StabilityParams, rate_chain) -> float:
    """sqrt of M_R times the max-column-sum norm of diag(lambda^2) P."""
    W = _weighted(params, rate_chain)
    return float(math.sqrt(W.shape[0] * W.sum(axis=0).max()))


def _check_lambda_bar(lambda_bar):
    if not lambda_bar > 0:
        raise ValueError("lambda_bar must be positive")
    if not lambda_bar < 1:
        raise ValueError("lambda_bar must be below 1; no positive interval exists otherwise")


def mati_bound(params: StabilityParams, lambda_bar: float) -> float:
    """Closed-form transmission interval bound.

    Uses the arctan expression for ``zeta > L``, the rational one when
    ``zeta`` equals ``L`` to relative 1e-12, and arctanh for ``zeta < L``.
    The expressions are written multiplied through by ``L`` so that
    ``L = 0`` is handled.
    """
    _check_lambda_bar(lambda_bar)
    L, z, lb = params.L, params.zeta, float(lambda_bar)
    if abs(z - L) <= BRANCH_RTOL * max(abs(z), abs(L)):
        return (1.0 / L) * (1.0 - lb) / (1.0 + lb)
    r = math.sqrt(abs(z * z - L * L))  # L * eta
    arg = r * (1.0 - lb) / (2.0 * lb / (1.0 + lb) * (z - L) + L * (1.0 + lb))
    if z > L:
        return math.atan(arg) / r
    if arg >= 1.0:
        raise ValueError("arctanh argument reached 1; parameters outside the bound's domain")
    return math.atanh(arg) / r


def default_phi_step(params: StabilityParams, lambda_bar: float) -> float:
    """Step for the phi-ODE oracle scaled to the fastest slope on the path."""
    rate = 2.0 * params.L + params.zeta * (lambda_bar + 1.0 / lambda_bar)
    return 1e-4 / rate


def mati_via_phi_ode(params: StabilityParams, lambda_bar: float, step: float | None = None,
                     *, max_steps: int = 200_000_000) -> float:
    """Hitting time of lambda_bar by phi' = -2 L phi - zeta (phi^2 + 1), phi(0) = 1/lambda_bar.

    Fixed-step RK4 with linear interpolation in the crossing step.

    Raises
    ------
    RuntimeError
        If the level is not reached within ``max_steps`` steps.
    """
    _check_lambda_bar(lambda_bar)
    if step is None:
        step = default_phi_step(params, lambda_bar)
    if not step > 0:
        raise ValueError("step must be positive")
    t = _core.phi_hitting_time(params.L, params.zeta, float(lambda_bar), float(step), int(max_steps))
    if t < 0:
        raise RuntimeError(f"phi did not reach {lambda_bar} within {max_steps} steps of {step:g} s")
    return float(t)


def mati_report(params: StabilityParams, lambda_bar: float, step: float | None = None,
                reference: float | None = None) -> dict:
    """Closed form, ODE oracle and their discrepancy (plus a reference value if given)."""
    bound = mati_bound(params, lambda_bar)
    ode = mati_via_phi_ode(params, lambda_bar, step)
    rep = {
        "lambda_bar": float(lambda_bar),
        "mati_closed_form": bound,
        "mati_phi_ode": ode,
        "relative_discrepancy": abs(bound - ode) / bound,
    }
    if reference is not None:
        rep["reference"] = float(reference)
        rep["relative_to_reference"] = (bound - reference) / reference
    return rep
