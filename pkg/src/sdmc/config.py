"""INI experiment configuration shared by every command.

Matrices are written row by row with ``;`` between rows and whitespace
between entries.  Channel columns are keyed ``<rate>/<state>/<power>`` and
hold the next-rate distribution; MDP rows are keyed ``<state>/<action>`` and
hold the next-state distribution.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .channel import FadingSpec, SdMcChannel
from .codesign import CostModel
from .environment import ControlPolicy, EnvMdp
from .simulator import PlantConfig, Policies, SimConfig
from .stability import StabilityParams


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


PRESETS = ("batch_reactor_sV",)

_PLAIN_KEYS = {
    "plant": {"A", "B", "K", "x0", "xhat0", "xi0"},
    "channel": {"rates", "rate_labels", "env_states", "powers"},
    "fading": {"power_levels", "shadowing", "noise_density", "bandwidth", "snr_thresholds", "doppler",
               "packet_period"},
    "mdp": {"states", "actions", "initial_state"},
    "costs": {"power"},
    "stability": {"L", "zeta", "lambdas", "lambda_bar", "quadratic_bounds_asserted", "alpha_W_lower",
                  "alpha_W_upper", "alpha_V_lower", "alpha_V_upper", "rho"},
    "codesign": {"lambda_bar", "bound_form", "form", "method", "grid_resolution", "n_random", "workers"},
    "policy": set(),
    "sim": {"T", "horizon", "dt", "runs", "seed", "epsilon", "tail_window", "stride", "perturbation",
            "blowup_factor", "workers"},
    "search": {"t_low", "t_high", "runs", "horizon", "rel_tol"},
    "sweep": {"from", "to", "step"},
    "output": {"dir"},
}
_PATTERN_KEYS = {
    "channel": re.compile(r"^[^/\s]+/[^/\s]+/[^/\s]+$"),
    "mdp": re.compile(r"^(cost/)?[^/\s]+(/[^/\s]+)?$"),
    "costs": re.compile(r"^rate/[^/\s]+$"),
    "policy": re.compile(r"^(control|power)/[^\s]+$"),
}


def _vector(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _matrix(text):
    rows = [_vector(r) for r in text.split(";") if r.strip()]
    if len({r.size for r in rows}) != 1:
        raise ConfigError(f"ragged matrix: {text!r}")
    return np.vstack(rows)


def _words(text):
    return tuple(text.split())


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v)) if abs(v) < 1e15 else repr(float(v))


def _fmt_vec(v):
    return " ".join(_fmt(x) for x in np.ravel(v))


def _fmt_mat(m):
    return "; ".join(_fmt_vec(r) for r in np.atleast_2d(m))


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, validated on construction by the owning modules."""

    plant: PlantConfig | None = None
    channel: SdMcChannel | None = None
    fading: FadingSpec | None = None
    mdp: EnvMdp | None = None
    costs: CostModel | None = None
    stability: StabilityParams | None = None
    lambda_bar: float | None = None
    codesign: dict = field(default_factory=dict)
    policies: Policies | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    search: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output_dir: str | None = None

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"configuration lacks section(s): {', '.join(missing)}")
        return self


def _check_keys(cp):
    for sec in cp.sections():
        if sec not in _PLAIN_KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key in _PLAIN_KEYS[sec]:
                continue
            pat = _PATTERN_KEYS.get(sec)
            if pat is None or not pat.match(key):
                raise ConfigError(f"unknown key {key!r} in [{sec}]")


def _parse_channel(sec):
    rates = _vector(sec["rates"])
    labels = _words(sec.get("rate_labels", " ".join(f"r{k + 1}" for k in range(rates.size))))
    states = _words(sec.get("env_states", "s1"))
    powers = _words(sec.get("powers", "p1"))
    if len(labels) != rates.size:
        raise ConfigError("rate_labels and rates differ in length")
    P = np.full((rates.size, rates.size, len(states), len(powers)), np.nan)
    for key, val in sec.items():
        if "/" not in key:
            continue
        r, s, p = key.split("/")
        try:
            j, si, pi = labels.index(r), states.index(s), powers.index(p)
        except ValueError as exc:
            raise ConfigError(f"channel key {key!r} names an unknown label") from exc
        col = _vector(val)
        if col.size != rates.size:
            raise ConfigError(f"channel column {key} has {col.size} entries, expected {rates.size}")
        P[:, j, si, pi] = col
    if np.isnan(P).any():
        j, s, p = np.argwhere(np.isnan(P[0]))[0]
        raise ConfigError(f"channel column {labels[j]}/{states[s]}/{powers[p]} missing")
    return SdMcChannel(rates, P, states, powers), labels


def _parse_mdp(sec):
    states, actions = _words(sec["states"]), _words(sec["actions"])
    q = np.full((len(states), len(states), len(actions)), np.nan)
    c = np.full((len(states), len(actions)), np.nan)
    for key, val in sec.items():
        if key.startswith("cost/"):
            s = key.split("/", 1)[1]
            if s not in states:
                raise ConfigError(f"cost for unknown state {s!r}")
            c[states.index(s)] = _vector(val)
        elif "/" in key:
            s, a = key.split("/")
            if s not in states or a not in actions:
                raise ConfigError(f"MDP key {key!r} names an unknown label")
            q[:, states.index(s), actions.index(a)] = _vector(val)
    if np.isnan(q).any() or np.isnan(c).any():
        raise ConfigError("MDP transitions or costs incomplete")
    init = states.index(sec.get("initial_state", states[0]))
    return EnvMdp(q, c, states, actions, init)


def _parse_costs(sec, channel, labels):
    power = _vector(sec["power"])
    Mr, Ms, Mp = channel.shape[1:]
    rate = np.full((Mr, Ms, Mp), np.nan)
    for key, val in sec.items():
        if key.startswith("rate/"):
            r = key.split("/", 1)[1]
            if r not in labels:
                raise ConfigError(f"rate cost for unknown rate {r!r}")
            v = _vector(val)
            rate[labels.index(r)] = v[0] if v.size == 1 else v.reshape(Ms, Mp)
    if np.isnan(rate).any():
        raise ConfigError("rate costs incomplete")
    return power, rate


def parse_config(text: str) -> ExperimentConfig:
    """Build an ExperimentConfig from INI text, validating every section."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    _check_keys(cp)
    cfg = ExperimentConfig()
    try:
        labels = None
        if cp.has_section("plant"):
            s = cp["plant"]
            cfg.plant = PlantConfig(_matrix(s["A"]), _matrix(s["B"]), _matrix(s["K"]), _vector(s["x0"]),
                                    _vector(s["xhat0"]) if "xhat0" in s else None, float(s.get("xi0", 2.0)))
        if cp.has_section("channel"):
            cfg.channel, labels = _parse_channel(cp["channel"])
            report = cfg.channel.validate()
            if not report.ok:
                raise ConfigError(f"channel invalid:\n{report}")
        if cp.has_section("fading"):
            s = cp["fading"]
            chan = cfg.channel
            cfg.fading = FadingSpec(
                power_levels=_vector(s["power_levels"]), shadowing=_vector(s["shadowing"]),
                noise_density=float(s["noise_density"]), bandwidth=float(s["bandwidth"]),
                snr_thresholds=_vector(s["snr_thresholds"]), doppler=float(s["doppler"]),
                packet_period=float(s["packet_period"]),
                rates=None if chan is None else chan.rates,
                env_states=None if chan is None else chan.env_states,
                powers=None if chan is None else chan.powers)
        if cp.has_section("mdp"):
            cfg.mdp = _parse_mdp(cp["mdp"])
        if cp.has_section("costs"):
            if cfg.channel is None or cfg.mdp is None:
                raise ConfigError("[costs] needs [channel] and [mdp]")
            power, rate = _parse_costs(cp["costs"], cfg.channel, labels)
            cfg.costs = CostModel(cfg.mdp.costs, power, rate)
        if cp.has_section("stability"):
            s = cp["stability"]
            qb = {k: float(s[k]) for k in ("alpha_W_lower", "alpha_W_upper", "alpha_V_lower", "alpha_V_upper",
                                           "rho") if k in s}
            cfg.stability = StabilityParams(float(s["L"]), float(s["zeta"]), _vector(s["lambdas"]), qb,
                                            s.getboolean("quadratic_bounds_asserted", False))
            if "lambda_bar" in s:
                cfg.lambda_bar = float(s["lambda_bar"])
        if cp.has_section("codesign"):
            s = cp["codesign"]
            conv = {"lambda_bar": float, "grid_resolution": float, "n_random": int, "workers": int}
            cfg.codesign = {k: conv.get(k, str)(v) for k, v in s.items()}
        if cp.has_section("policy"):
            cfg.policies = _parse_policy(cp["policy"], cfg, labels)
        if cp.has_section("sim"):
            s = cp["sim"]
            ints = {"runs", "seed", "stride", "workers"}
            kw = {k: (int(v) if k in ints else float(v)) for k, v in s.items()}
            cfg.sim = SimConfig(**kw)
        if cp.has_section("search"):
            s = cp["search"]
            cfg.search = {k: (int(v) if k == "runs" else float(v)) for k, v in s.items()}
        if cp.has_section("sweep"):
            cfg.sweep = {k: float(v) for k, v in cp["sweep"].items()}
        if cp.has_section("output"):
            cfg.output_dir = cp["output"].get("dir")
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


def _parse_policy(sec, cfg, labels):
    if cfg.mdp is None or cfg.channel is None:
        raise ConfigError("[policy] needs [channel] and [mdp]")
    mdp, ch = cfg.mdp, cfg.channel
    ctrl = np.full((mdp.n_states, mdp.n_actions), np.nan)
    power = np.full((ch.n_rates, ch.n_powers), np.nan)
    for key, val in sec.items():
        kind, name = key.split("/", 1)
        v = _vector(val)
        if kind == "control":
            if name not in mdp.states:
                raise ConfigError(f"control policy for unknown state {name!r}")
            ctrl[mdp.states.index(name)] = v
        else:
            if name not in labels:
                raise ConfigError(f"power policy for unknown rate {name!r}")
            power[labels.index(name)] = v
    if np.isnan(ctrl).any() or np.isnan(power).any():
        raise ConfigError("policy section incomplete")
    return Policies(ControlPolicy(ctrl), power)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def preset_text(name: str = "batch_reactor_sV") -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("sdmc.presets").joinpath(f"{name}.ini").read_text(encoding="utf-8")


def load_preset(name: str = "batch_reactor_sV") -> ExperimentConfig:
    return parse_config(preset_text(name))


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize back to INI text; ``parse_config(dump_config(c))`` reproduces ``c``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if cfg.plant is not None:
        p = cfg.plant
        cp["plant"] = {"A": _fmt_mat(p.A), "B": _fmt_mat(p.B), "K": _fmt_mat(p.K), "x0": _fmt_vec(p.x0),
                       "xhat0": _fmt_vec(p.xhat0), "xi0": _fmt(p.xi0)}
    labels = None
    if cfg.channel is not None:
        ch = cfg.channel
        labels = [f"r{k + 1}" for k in range(ch.n_rates)]
        sec = {"rates": _fmt_vec(ch.rates), "rate_labels": " ".join(labels), "env_states": " ".join(ch.env_states),
               "powers": " ".join(ch.powers)}
        for j in range(ch.n_rates):
            for s in range(ch.n_states):
                for q in range(ch.n_powers):
                    sec[f"{labels[j]}/{ch.env_states[s]}/{ch.powers[q]}"] = _fmt_vec(ch.column(j, s, q))
        cp["channel"] = sec
    if cfg.fading is not None:
        f = cfg.fading
        cp["fading"] = {"power_levels": _fmt_vec(f.power_levels), "shadowing": _fmt_vec(f.shadowing),
                        "noise_density": _fmt(f.noise_density), "bandwidth": _fmt(f.bandwidth),
                        "snr_thresholds": _fmt_vec(f.snr_thresholds), "doppler": _fmt(f.doppler),
                        "packet_period": _fmt(f.packet_period)}
    if cfg.mdp is not None:
        m = cfg.mdp
        sec = {"states": " ".join(m.states), "actions": " ".join(m.actions), "initial_state": m.states[m.initial_state]}
        for s in range(m.n_states):
            for a in range(m.n_actions):
                sec[f"{m.states[s]}/{m.actions[a]}"] = _fmt_vec(m.transitions[:, s, a])
        for s in range(m.n_states):
            sec[f"cost/{m.states[s]}"] = _fmt_vec(m.costs[s])
        cp["mdp"] = sec
    if cfg.costs is not None and cfg.channel is not None:
        shape = cfg.channel.shape[1:]
        rate = np.broadcast_to(cfg.costs.rate_cost if cfg.costs.rate_cost.ndim > 1
                               else cfg.costs.rate_cost[:, None, None], shape)
        sec = {"power": _fmt_vec(cfg.costs.power_cost)}
        for j in range(shape[0]):
            sec[f"rate/{labels[j]}"] = _fmt_vec(rate[j])
        cp["costs"] = sec
    if cfg.stability is not None:
        st = cfg.stability
        sec = {"L": _fmt(st.L), "zeta": _fmt(st.zeta), "lambdas": _fmt_vec(st.lambdas),
               "quadratic_bounds_asserted": str(st.quadratic_bounds_asserted).lower()}
        sec.update({k: _fmt(v) for k, v in st.quadratic_bounds.items()})
        if cfg.lambda_bar is not None:
            sec["lambda_bar"] = _fmt(cfg.lambda_bar)
        cp["stability"] = sec
    if cfg.codesign:
        cp["codesign"] = {k: str(v) for k, v in cfg.codesign.items()}
    if cfg.policies is not None and cfg.mdp is not None and labels is not None:
        sec = {}
        for s in range(cfg.mdp.n_states):
            sec[f"control/{cfg.mdp.states[s]}"] = _fmt_vec(cfg.policies.control.table[s])
        for j in range(len(labels)):
            sec[f"power/{labels[j]}"] = _fmt_vec(cfg.policies.power[j])
        cp["policy"] = sec
    sim = cfg.sim
    cp["sim"] = {k: str(getattr(sim, k)) for k in _PLAIN_KEYS["sim"] if getattr(sim, k) is not None}
    if cfg.search:
        cp["search"] = {k: str(v) for k, v in cfg.search.items()}
    if cfg.sweep:
        cp["sweep"] = {k: str(v) for k, v in cfg.sweep.items()}
    if cfg.output_dir:
        cp["output"] = {"dir": cfg.output_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
