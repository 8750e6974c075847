"""Event-driven simulation of the scaled best bid/ask queues and an order position.

State is ``(Q^b, Q^a, Z)``: bid queue, ask queue, and the volume ahead of a
tracked bid order.  Each event of the arrival process brings a mark; with
``d = size / n`` the updates are

* bid limit:   ``Q^b += d``
* bid market:  ``Q^b -= d``, ``Z -= d``
* bid cancel:  ``Q^b -= d``, ``Z -= d * U(Z/Q^b)`` (pre-event ratio)
* ask types:   the same on ``Q^a`` without touching ``Z``

where ``U`` is the cancellation profile (identity for uniform cancellation).
Updates stop at the first event leaving any coordinate nonpositive; the state
is frozen at the overshoot value, not clamped.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import point_processes as pp
from .kernels import active as _k
from .order_flow import Constant, Exponential, GeometricInteger, LogNormal, MarkModel

KNOTS = 1025


# --------------------------------------------------------------------------
# cancellation profiles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    """Cancellations hit every unit of the queue with equal probability."""

    def __call__(self, x):
        return np.clip(x, 0.0, 1.0)

    lipschitz = 1.0
    is_uniform = True

    def knots(self):
        return np.linspace(0.0, 1.0, KNOTS)


@dataclass(frozen=True)
class Custom:
    """Cancellation profile ``x -> share`` on [0, 1].

    The simulator evaluates it through ``KNOTS`` equally spaced values with
    linear interpolation.  ``profile(0) = 0``, ``profile(1) = 1``, nondecreasing
    and ``lipschitz``-Lipschitz are checked on the knots.
    """

    profile: Callable
    lipschitz: float
    is_uniform = False

    def __post_init__(self):
        y = self.knots()
        if abs(y[0]) > 1e-12 or abs(y[-1] - 1.0) > 1e-12:
            raise ValueError("cancellation profile must map 0 -> 0 and 1 -> 1")
        if np.any(np.diff(y) < -1e-12):
            raise ValueError("cancellation profile must be nondecreasing")
        slope = np.max(np.abs(np.diff(y))) * (KNOTS - 1)
        if slope > self.lipschitz * (1.0 + 1e-9):
            raise ValueError(f"profile slope {slope:g} exceeds Lipschitz constant {self.lipschitz:g}")

    def __call__(self, x):
        return np.asarray(self.profile(np.clip(x, 0.0, 1.0)), dtype=float)

    def knots(self):
        grid = np.linspace(0.0, 1.0, KNOTS)
        return np.asarray([float(self.profile(g)) for g in grid])


def power_profile(k):
    """``x -> x**k``; k > 1 protects orders near the head of the queue."""
    return Custom(profile=lambda x: np.asarray(x, dtype=float) ** k, lipschitz=max(1.0, float(k)))


CancellationRule = (Uniform, Custom)


# --------------------------------------------------------------------------
# config and path types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    arrival: object
    marks: MarkModel
    n: int
    qb0: float
    qa0: float
    z0: float
    horizon: float
    cancellation: object = field(default_factory=Uniform)
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("scale n must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.z0 > self.qb0:
            raise ValueError("order position z0 must not exceed the bid queue qb0")
        if not isinstance(self.cancellation, CancellationRule):
            raise ValueError("cancellation must be Uniform() or Custom(...)")


@dataclass(frozen=True)
class QueuePath:
    """A simulated trajectory; state arrays hold post-event values."""

    n: int
    initial: tuple
    times: np.ndarray
    types: np.ndarray
    sizes: np.ndarray
    qb: np.ndarray
    qa: np.ndarray
    z: np.ndarray
    tau_b: float
    tau_a: float
    tau_z: float
    violations: int
    horizon: float

    @property
    def tau(self):
        return min(self.tau_b, self.tau_a, self.tau_z)

    def state_at(self, t):
        """(Q^b, Q^a, Z) at times ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        qb = np.where(idx >= 0, self.qb[np.maximum(idx, 0)] if self.qb.size else 0.0, self.initial[0])
        qa = np.where(idx >= 0, self.qa[np.maximum(idx, 0)] if self.qa.size else 0.0, self.initial[1])
        z = np.where(idx >= 0, self.z[np.maximum(idx, 0)] if self.z.size else 0.0, self.initial[2])
        return qb, qa, z


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def _capacity(config):
    a = config.arrival
    if isinstance(a, pp.LinearStateDependent):
        lam = a.lam + a.alpha_q * max(config.qa0, 0.0) + a.beta_q * max(config.qb0, 0.0)
    else:
        lam = pp.stationary_rate(a)
    mean = config.n * lam * config.horizon
    return int(1.3 * mean + 10.0 * math.sqrt(mean) + 1024)


def _run(config, mode, times, alpha_q, beta_q, lam, record, stop_early):
    cum, code, la, lb = config.marks.kernel_arrays()
    rule = config.cancellation
    knots = rule.knots()
    cap = _capacity(config) if record else 1
    while True:
        out = [np.empty(cap), np.empty(cap, dtype=np.int64), np.empty(cap),
               np.empty(cap), np.empty(cap), np.empty(cap)]
        res = _k.lob_run(mode, times, config.seed, config.stream, float(config.n), float(lam),
                         float(alpha_q), float(beta_q), float(config.horizon), cum, code, la, lb,
                         float(config.qb0), float(config.qa0), float(config.z0),
                         bool(rule.is_uniform), knots, bool(record), bool(stop_early), *out)
        count, overflow = int(res[0]), bool(res[1])
        if not overflow:
            break
        cap *= 2
    tau_b, tau_a, tau_z = (float(x) for x in res[2:5])
    if not record:
        count = 0
    return QueuePath(n=int(config.n), initial=(config.qb0, config.qa0, config.z0),
                     times=out[0][:count].copy(), types=out[1][:count].copy(),
                     sizes=out[2][:count].copy(), qb=out[3][:count].copy(),
                     qa=out[4][:count].copy(), z=out[5][:count].copy(),
                     tau_b=tau_b, tau_a=tau_a, tau_z=tau_z, violations=int(res[8]),
                     horizon=float(config.horizon)), tuple(float(x) for x in res[5:8])


_NO_TIMES = np.empty(0)


def simulate_path(config, record=True, stop_early=False):
    """Simulate one path of the scaled queue system.

    Parameters
    ----------
    config : SimConfig
    record : bool
        Keep every event.  With ``record=False`` only the stop times and the
        final state are computed (no event arrays).
    stop_early : bool
        Stop generating events at the first stop time.  By default the event
        stream runs to the horizon so that the flows can be extracted from the
        untruncated stream.

    Returns
    -------
    QueuePath
    """
    arr = config.arrival
    if isinstance(arr, pp.LinearStateDependent):
        return simulate_state_dependent(config, record=record, stop_early=stop_early)
    if isinstance(arr, pp.Poisson):
        path, _ = _run(config, 0, _NO_TIMES, 0.0, 0.0, arr.rate, record, stop_early)
        return path
    # the scaled system sees N(n t): simulate N on [0, n T] and rescale time
    ev = pp.simulate_arrivals(arr, config.n * config.horizon, config.seed, stream=config.stream)
    times = ev.times / config.n
    path, _ = _run(config, 2, times, 0.0, 0.0, 1.0, record, stop_early)
    return path


def simulate_state_dependent(config, record=True, stop_early=False):
    """Queue path whose arrival intensity is affine in the current queue sizes.

    The scaled intensity is ``n*lam + alpha_q*n*Q^a(t-) + beta_q*n*Q^b(t-)``.
    With both coefficients zero the path coincides with the Poisson path of
    rate ``lam`` for the same seed.
    """
    arr = config.arrival
    if not isinstance(arr, pp.LinearStateDependent):
        raise ValueError("simulate_state_dependent needs LinearStateDependent arrivals")
    path, _ = _run(config, 1, _NO_TIMES, arr.alpha_q, arr.beta_q, arr.lam, record, stop_early)
    return path


def final_state(config):
    """Stop times and state at the horizon without recording events."""
    arr = config.arrival
    if isinstance(arr, pp.Poisson):
        path, state = _run(config, 0, _NO_TIMES, 0.0, 0.0, arr.rate, False, True)
    elif isinstance(arr, pp.LinearStateDependent):
        path, state = _run(config, 1, _NO_TIMES, arr.alpha_q, arr.beta_q, arr.lam, False, True)
    else:
        ev = pp.simulate_arrivals(arr, config.n * config.horizon, config.seed, stream=config.stream)
        path, state = _run(config, 2, ev.times / config.n, 0.0, 0.0, 1.0, False, True)
    return path, state


def jump_chain_batch(marks, n, q0, paths, seed, stream0=0, max_events=10 ** 7, checkpoints=()):
    """Embedded jump chain of the Poisson-clock queue for many paths.

    Returns ``(counts, states, violations)``: per path the 1-based event index
    at which Q^b, Q^a and Z first become nonpositive (0 if not within
    ``max_events``), the state after each checkpoint event count, and the
    number of order-position invariant violations.  Uniform cancellation only.
    """
    cum, code, la, lb = marks.kernel_arrays()
    chk = np.asarray(sorted(checkpoints), dtype=np.int64)
    counts = np.zeros((paths, 3), dtype=np.int64)
    states = np.zeros((paths, chk.size, 3))
    viol = np.zeros(paths, dtype=np.int64)
    _k.chain_batch(seed, stream0, paths, cum, code, la, lb, float(n), float(q0[0]), float(q0[1]),
                   float(q0[2]), int(max_events), chk, counts, states, viol)
    return counts, states, viol


# --------------------------------------------------------------------------
# flows
# --------------------------------------------------------------------------

def extract_flows(path, lam, vbar):
    """Scaled net order flow C_n and centered flow Psi_n at the event times.

    Returns ``(times, C, Psi)`` with ``C[i] = sum_{k<=i} V_k / n`` and
    ``Psi[i] = (sum_{k<=i} V_k - lam * vbar * n * t_i) / sqrt(n)``.
    """
    n = path.n
    m = path.times.size
    v = np.zeros((m, 6))
    v[np.arange(m), path.types] = path.sizes
    c = np.cumsum(v, axis=0) / n
    psi = (n * c - lam * np.outer(path.times, vbar) * n) / math.sqrt(n)
    return path.times.copy(), c, psi


def flows_at(path, lam, vbar, t):
    """(C_n(t), Psi_n(t)) at arbitrary times ``t`` (rows)."""
    times, c, _ = extract_flows(path, lam, vbar)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.searchsorted(times, t, side="right") - 1
    if c.size:
        ct = np.where(idx[:, None] >= 0, c[np.maximum(idx, 0)], 0.0)
    else:
        ct = np.zeros((t.size, 6))
    n = path.n
    psi = (n * ct - lam * np.outer(t, vbar) * n) / math.sqrt(n)
    return ct, psi


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------

def write_path_csv(path, fname):
    with open(fname, "w", newline="") as fh:
        fh.write("time,type,size,qb,qa,z\n")
        for row in zip(path.times, path.types, path.sizes, path.qb, path.qa, path.z):
            t, j, s, b, a, z = row
            fh.write(f"{t:.17g},{int(j) + 1},{s:.17g},{b:.17g},{a:.17g},{z:.17g}\n")


def write_flows_csv(path, lam, vbar, fname):
    times, c, psi = extract_flows(path, lam, vbar)
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"c{k}" for k in range(1, 7)] + [f"psi{k}" for k in range(1, 7)])
        for i in range(times.size):
            w.writerow([f"{times[i]:.17g}"] + [f"{x:.17g}" for x in c[i]] + [f"{x:.17g}" for x in psi[i]])


_LAWS = {"const": Constant, "exp": Exponential, "geom": GeometricInteger, "lognormal": LogNormal}


def parse_law(text):
    """``"const:1.5"``, ``"exp:4"``, ``"geom:3"``, ``"lognormal:0,0.5"``."""
    name, _, args = str(text).partition(":")
    if name.strip() not in _LAWS:
        raise ValueError(f"unknown size law {name!r}; expected one of {sorted(_LAWS)}")
    vals = [float(x) for x in args.split(",") if x.strip()]
    return _LAWS[name.strip()](*vals)


def _floats(value):
    if isinstance(value, (list, tuple)):
        return [float(x) for x in value]
    return [float(x) for x in str(value).replace(",", " ").split()]


def parse_arrival(d):
    kind = d.get("arrival", "poisson")
    if kind == "poisson":
        return pp.Poisson(float(d.get("rate", 1.0)))
    if kind == "hawkes":
        return pp.HawkesExp(float(d["nu"]), float(d["a_h"]), float(d["b_h"]))
    if kind == "cox":
        return pp.CoxShotNoiseExp(float(d["nu"]), float(d["rho_s"]), float(d["kappa"]), float(d["delta_s"]))
    if kind == "linear":
        return pp.LinearStateDependent(float(d.get("lam", 1.0)), float(d.get("alpha_q", 0.0)),
                                       float(d.get("beta_q", 0.0)))
    raise ValueError(f"unknown arrival {kind!r}")


def parse_marks(d):
    if "vbar" in d:
        return MarkModel.from_mean_vector(_floats(d["vbar"]))
    p = _floats(d.get("p", [1.0 / 6] * 6))
    laws = d.get("laws")
    if laws is None:
        sizes = _floats(d.get("sizes", [1.0] * 6))
        return MarkModel(p=tuple(p), laws=tuple(Constant(s) for s in sizes))
    if isinstance(laws, str):
        laws = [x for x in laws.split(";") if x.strip()]
    return MarkModel(p=tuple(p), laws=tuple(parse_law(x) for x in laws))


def parse_cancellation(value):
    value = str(value or "uniform").strip()
    if value == "uniform":
        return Uniform()
    if value.startswith("power:"):
        return power_profile(float(value.split(":", 1)[1]))
    raise ValueError(f"unknown cancellation {value!r}; use 'uniform' or 'power:k'")


SIM_KEYS = {"arrival", "rate", "nu", "a_h", "b_h", "rho_s", "kappa", "delta_s", "lam", "alpha_q",
            "beta_q", "p", "sizes", "laws", "vbar", "n", "qb0", "qa0", "z0", "horizon",
            "cancellation", "seed", "stream"}


def sim_config_from_mapping(d, seed=None):
    """Build a SimConfig from a flat key-value mapping; unknown keys are rejected."""
    unknown = set(d) - SIM_KEYS
    if unknown:
        raise KeyError(f"unknown simulate keys: {sorted(unknown)}")
    return SimConfig(arrival=parse_arrival(d), marks=parse_marks(d), n=int(float(d.get("n", 100))),
                     qb0=float(d["qb0"]), qa0=float(d["qa0"]), z0=float(d["z0"]),
                     horizon=float(d["horizon"]), cancellation=parse_cancellation(d.get("cancellation")),
                     seed=int(d.get("seed", 0) if seed is None else seed), stream=int(d.get("stream", 0)))


def read_sim_config(fname, seed=None):
    """Read a SimConfig from JSON or an INI file with a ``[simulate]`` section."""
    with open(fname) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        d = json.loads(text)
        d = d.get("simulate", d)
    else:
        import configparser
        cp = configparser.ConfigParser()
        cp.read_string(text)
        d = dict(cp["simulate"])
    return sim_config_from_mapping(d, seed=seed)
