"""Monte Carlo experiments that bind the simulators to the analytic engines.

Every experiment returns an :class:`ExperimentReport`.  Paths are split into
chunks of a fixed size, each chunk owning a contiguous range of random
streams, so results do not depend on the worker count.  Standard errors come
from path-level batch means.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import point_processes as pp
from .diffusion import (DiffusionParams, depletion_time_fluct_cdf, exit_samples,
                        fluctuation_variance_at_execution, price_decrease_probability,
                        survival_probability)
from .fluid import FluidParams, fluid_hitting_times, fluid_position, fluid_queues
from .kernels import active as _k
from .lob_simulator import SimConfig, jump_chain_batch, simulate_path
from .order_flow import CONVENTIONS, Constant, MarkModel, flow_moments, psi_matrix, sample_marks
from .rng import generator
from .special import ks_test, norm_cdf

BATCHES = 50
MARK_STREAM_OFFSET = 1 << 40
_CLOCK_SALT = 0x7A11
_CHAIN_CHUNK = 250
_EXIT_CHUNK = 10_000
_EXAMPLE_CHUNK = 10_000


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def _encode(x, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in x.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(x, list):
        if not x:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in x):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in x) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in x]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    return json.dumps(x)


def dumps(obj, indent=2):
    """JSON text with every float written at 17 significant digits.

    Non-finite floats become the strings ``"nan"``, ``"inf"`` and ``"-inf"``.
    """
    return _encode(_plain(obj), indent, 0) + "\n"


@dataclass
class ExperimentReport:
    """Outcome of one experiment.

    ``checks`` maps a check name to ``(passed, tolerance)``, where tolerance is
    the declared rule, for example ``"|z| <= 3"``.  Only checks listed in
    ``hard`` count toward :attr:`passed`; the others are reported.
    """

    name: str
    params: dict
    sizes: dict
    statistics: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    standard_errors: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    hard: Tuple[str, ...] = ()
    notes: list = field(default_factory=list)
    wall_clock: float = 0.0

    def check(self, key, ok, tolerance, hard=True):
        self.checks[key] = (bool(ok), tolerance)
        if hard:
            self.hard = tuple(self.hard) + (key,)

    @property
    def passed(self):
        return all(self.checks[k][0] for k in self.hard)

    def to_dict(self, timing=True):
        d = {
            "name": self.name, "params": self.params, "sizes": self.sizes,
            "statistics": self.statistics, "targets": self.targets,
            "standard_errors": self.standard_errors,
            "checks": {k: {"passed": v[0], "tolerance": v[1], "hard": k in self.hard}
                       for k, v in self.checks.items()},
            "passed": self.passed, "notes": list(self.notes),
        }
        if timing:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self, timing=False):
        """JSON text; timing is left out by default so reruns are byte-identical."""
        return dumps(self.to_dict(timing=timing))

    def to_text(self):
        lines = [f"[{'PASS' if self.passed else 'FAIL'}] {self.name}  ({self.wall_clock:.1f} s)"]
        for k, (ok, tol) in self.checks.items():
            tag = ("ok" if ok else "FAILED") + ("" if k in self.hard else " (reported)")
            lines.append(f"    {k}: {tag}  [{tol}]")
        for note in self.notes:
            lines.append(f"    note: {note}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------

def batch_mean_se(values, batches=BATCHES):
    """Mean and batch-means standard error along axis 0.

    The sample is cut into ``batches`` contiguous groups of (nearly) equal size;
    the SE is the standard deviation of the group means over ``sqrt(batches)``.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] < 2 * batches:
        raise ValueError(f"need at least {2 * batches} paths for {batches} batches")
    groups = np.array_split(v, batches, axis=0)
    means = np.stack([g.mean(axis=0) for g in groups])
    weights = np.array([g.shape[0] for g in groups], dtype=float)
    mean = np.tensordot(weights, means, axes=1) / weights.sum()
    se = means.std(axis=0, ddof=1) / math.sqrt(batches)
    return mean, se


def _chunks(total, size):
    return [(s, min(total, s + size)) for s in range(0, total, size)]


def _run_chunks(fn, chunks, workers):
    """Apply ``fn(start, stop)`` to every chunk, results in chunk order."""
    if workers is None or workers <= 1 or len(chunks) <= 1:
        return [fn(a, b) for a, b in chunks]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(lambda c: fn(*c), chunks))


def _zscore(value, target, se):
    if se > 0:
        return (value - target) / se
    return 0.0 if value == target else math.inf


@dataclass(frozen=True)
class Regime:
    """Queue regime with Poisson arrivals: intensity, mean marks and start state.

    ``marks`` defaults to uniform types with constant sizes matching ``vbar``.
    """

    lam: float
    vbar: Tuple[float, ...]
    qb: float
    qa: float
    z: float
    marks: Optional[MarkModel] = None

    def fluid(self):
        return FluidParams(self.lam, tuple(self.vbar), self.qb, self.qa, self.z)

    def mark_model(self):
        return self.marks if self.marks is not None else MarkModel.from_mean_vector(self.vbar)

    def to_dict(self):
        m = self.mark_model()
        return {"lambda": self.lam, "vbar": list(self.vbar), "qb": self.qb, "qa": self.qa,
                "z": self.z, "type_probabilities": list(m.p),
                "size_laws": [f"{type(l).__name__}{tuple(l.params)}" for l in m.laws]}


REFERENCE_REGIME = Regime(lam=1.0, vbar=(1.0, 0.6, 0.8, 1.0, 0.7, 0.8), qb=100.0, qa=100.0, z=100.0)


# --------------------------------------------------------------------------
# fluid convergence
# --------------------------------------------------------------------------

def _sup_errors(path, fl, t_end):
    """Sup distance of (Q^b, Q^a, Z) to the fluid limit on [0, t_end].

    Both the pre-jump and the post-jump values are compared at each event time
    (the fluid limit is continuous, so this is the exact sup over the interval
    for a piecewise-constant path against monotone pieces between events).
    """
    keep = path.times <= t_end
    t = np.concatenate(([0.0], path.times[keep], [t_end]))
    qb_f, qa_f = fluid_queues(fl, t)
    z_f = fluid_position(fl, t)
    pre = [np.concatenate(([x0], arr[keep], [arr[keep][-1] if keep.any() else x0]))
           for x0, arr in zip(path.initial, (path.qb, path.qa, path.z))]
    out = []
    for k, f in enumerate((qb_f, qa_f, z_f)):
        post = pre[k]
        before = np.concatenate(([post[0]], post[:-1]))
        out.append(max(np.max(np.abs(post - f)), np.max(np.abs(before - f))))
    return out


def fluid_convergence_experiment(regime: Regime = REFERENCE_REGIME, n_list=(100, 1000, 10000), paths=20,
                                 seed=0, workers=1, horizon_fraction=0.9, factor=3.0):
    """Median sup-error of the scaled queues against the fluid limit.

    Hard checks: the Z error decreases along ``n_list`` and drops by at least
    ``factor`` from the first to the last ``n``.
    """
    t0 = time.perf_counter()
    fl = regime.fluid()
    marks = regime.mark_model()
    tau = min(fluid_hitting_times(fl))
    t_end = horizon_fraction * tau
    n_list = [int(n) for n in n_list]
    errors = {}
    for n in n_list:
        def one(start, stop, n=n):
            res = []
            for path_id in range(start, stop):
                cfg = SimConfig(arrival=pp.Poisson(regime.lam), marks=marks, n=n, qb0=regime.qb,
                                qa0=regime.qa, z0=regime.z, horizon=t_end, seed=seed,
                                stream=path_id)
                res.append(_sup_errors(simulate_path(cfg), fl, t_end))
            return res
        rows = [r for part in _run_chunks(one, _chunks(paths, 1), workers) for r in part]
        errors[n] = np.asarray(rows)
    med = {n: np.median(e, axis=0) for n, e in errors.items()}
    rep = ExperimentReport(
        name="fluid_convergence",
        params={"regime": regime.to_dict(), "horizon": t_end, "n_list": n_list},
        sizes={"n": n_list, "paths": int(paths), "seed": int(seed)},
        statistics={f"median_sup_error_n{n}": {"qb": m[0], "qa": m[1], "z": m[2]}
                    for n, m in med.items()},
        targets={"z_error_ratio_first_to_last_min": factor},
    )
    z = [med[n][2] for n in n_list]
    finite = all(np.isfinite(e).all() for e in errors.values())
    rep.check("finite_errors", finite, "all errors finite")
    if len(n_list) > 1:
        rep.statistics["z_error_ratio_first_to_last"] = z[0] / z[-1] if z[-1] > 0 else math.inf
        rep.check("z_monotone_decay", all(a > b for a, b in zip(z, z[1:])), "strictly decreasing in n")
        rep.check("z_factor", z[-1] * factor <= z[0], f"e(n_last) <= e(n_first) / {factor}")
        for k, name in ((0, "qb"), (1, "qa")):
            e = [med[n][k] for n in n_list]
            rep.check(f"{name}_monotone_decay", all(a > b for a, b in zip(e, e[1:])),
                      "strictly decreasing in n", hard=False)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# covariance of the centered flow
# --------------------------------------------------------------------------

def centered_flow_samples(arrival, marks, n, paths, seed=0, workers=1, t=1.0):
    """Samples of Psi_n(t) = (sum of marks up to N(n t) - lam vbar n t) / sqrt(n)."""
    lam = pp.stationary_rate(arrival)
    vbar = np.array([p * l.mean() for p, l in zip(marks.p, marks.laws)])

    def one(start, stop):
        out = np.empty((stop - start, 6))
        for i, path_id in enumerate(range(start, stop)):
            count = len(pp.simulate_arrivals(arrival, n * t, seed, stream=path_id))
            v = sample_marks(marks, count, seed, stream=MARK_STREAM_OFFSET + path_id)
            out[i] = (v.sum(axis=0) - lam * vbar * n * t) / math.sqrt(n)
        return out

    return np.concatenate(_run_chunks(one, _chunks(paths, 1000), workers))


def covariance_experiment(arrival=None, marks=None, n=1000, paths=10_000, seed=0, workers=1,
                          convention="counting-clt", z_max=5.0):
    """Mean and covariance of Psi_n(1) against the limiting covariance.

    The covariance target is ``psi_matrix`` with ``vd2`` the CLT constant of
    the arrival process; every convention is reported and the hard check uses
    ``convention``.
    """
    t0 = time.perf_counter()
    arrival = pp.Poisson(1.0) if arrival is None else arrival
    marks = MarkModel.constant([1.0] * 6) if marks is None else marks
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    x = centered_flow_samples(arrival, marks, n, paths, seed, workers)
    mean, mean_se = batch_mean_se(x)
    centered = x - x.mean(axis=0)
    prods = (centered[:, :, None] * centered[:, None, :]).reshape(paths, 36)
    cov, cov_se = batch_mean_se(prods)
    cov = cov.reshape(6, 6) * paths / (paths - 1)
    cov_se = cov_se.reshape(6, 6)
    lam = pp.stationary_rate(arrival)
    vd2 = pp.clt_variance(arrival)
    mom = flow_moments(marks, lam, vd2, convention)
    targets = {c: psi_matrix(mom.sigma, mom.vbar, vd2, lam, c) for c in CONVENTIONS}
    zs = {c: np.max(np.abs((cov - tgt) / np.where(cov_se > 0, cov_se, np.inf)))
          for c, tgt in targets.items()}
    z_mean = float(np.max(np.abs(mean / mean_se)))
    rep = ExperimentReport(
        name="covariance",
        params={"arrival": repr(arrival), "lambda": lam, "vd2": vd2, "convention": convention,
                "type_probabilities": list(marks.p)},
        sizes={"n": int(n), "paths": int(paths), "seed": int(seed), "batches": BATCHES},
        statistics={"mean": mean, "covariance": cov, "max_abs_z_mean": z_mean,
                    "max_abs_z_covariance": {c: float(z) for c, z in zs.items()}},
        targets={"mean": np.zeros(6), "covariance": {c: t for c, t in targets.items()}},
        standard_errors={"mean": mean_se, "covariance": cov_se},
    )
    rep.check("mean_zero", z_mean <= z_max, f"|mean / SE| <= {z_max} entrywise")
    for c in CONVENTIONS:
        rep.check(f"covariance_{c}", zs[c] <= z_max, f"|(cov - target) / SE| <= {z_max} entrywise",
                  hard=(c == convention))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# quadrant exit of the diffusion limit
# --------------------------------------------------------------------------

def hitting_probability_experiment(params: DiffusionParams, paths=100_000, seed=0, workers=1,
                                   times=None, method="auto", dt=1e-4, t_max=None, z_max=3.0,
                                   check_decrease=True):
    """Monte Carlo exit side and time of the quadrant against the analytic laws.

    ``times`` are the survival grid (default five points scaled by r0^2).  The
    Euler sampler stops at ``t_max``; censored paths count as surviving.  Their
    exit side is unknown, so the price-decrease target is checked against the
    bracket ``[freq - z se, freq + censored + z se]``, which is the usual
    two-sided test when nothing is censored.
    """
    t0 = time.perf_counter()
    if times is None:
        times = params.r0 ** 2 * np.array([0.1, 0.25, 0.5, 1.0, 2.0])
    times = np.asarray(times, dtype=float)
    if method == "auto":
        method = "exact" if params.rho == 0 else "euler"
    if t_max is None:
        t_max = float(times.max()) if method == "euler" else math.inf

    def one(start, stop):
        kw = {"dt": dt, "t_max": t_max} if method == "euler" else {}
        return exit_samples(params, stop - start, seed=seed, stream=start, method=method, **kw)

    parts = _run_chunks(one, _chunks(paths, _EXIT_CHUNK), workers)
    t_exit = np.concatenate([p[0] for p in parts])
    side = np.concatenate([p[1] for p in parts])
    rep = ExperimentReport(
        name="hitting_probability",
        params={"diffusion": params.to_dict(), "method": method, "dt": dt if method == "euler" else None,
                "t_max": t_max, "survival_times": times},
        sizes={"paths": int(paths), "seed": int(seed), "batches": BATCHES},
    )
    rep.statistics["censored_fraction"] = float(np.mean(side < 0))
    if check_decrease:
        freq, se = batch_mean_se((side == 1).astype(float))
        target = price_decrease_probability(params)
        z = _zscore(float(freq), target, float(se))
        rep.statistics["p_decrease"] = float(freq)
        rep.standard_errors["p_decrease"] = float(se)
        rep.targets["p_decrease"] = target
        rep.statistics["z_p_decrease"] = z
        censored = rep.statistics["censored_fraction"]
        ok = freq - z_max * se <= target <= freq + censored + z_max * se
        rep.check("p_decrease", bool(ok), f"target in [freq - {z_max} se, freq + censored + {z_max} se]")
    surv_mc, surv_se = batch_mean_se((t_exit[:, None] > times[None, :]).astype(float))
    surv = np.array([survival_probability(params, t) for t in times])
    zs = [_zscore(m, s, e) for m, s, e in zip(surv_mc, surv, surv_se)]
    rep.statistics["survival"] = surv_mc
    rep.standard_errors["survival"] = surv_se
    rep.targets["survival"] = surv
    rep.statistics["z_survival"] = zs
    rep.check("survival", all(abs(z) <= z_max for z in zs), f"|z| <= {z_max} at every grid time")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# execution and depletion time fluctuations
# --------------------------------------------------------------------------

def _chain_hitting_times(marks, n, q0, paths, seed, rate, column, max_events, workers,
                         stream_base=0):
    """First-passage times from the jump chain with an independent Gamma clock.

    The K-th event of a Poisson clock of intensity ``n * rate`` occurs at a
    Gamma(K, n * rate) time, so the times are drawn after the event counts.
    Returns ``(times, counts, violations)``; uncrossed paths get ``inf``.
    """
    def one(start, stop):
        counts, _, viol = jump_chain_batch(marks, n, q0, stop - start, seed,
                                           stream0=stream_base + start, max_events=max_events)
        k = counts[:, column]
        rng = generator(seed, stream_base + start, salt=_CLOCK_SALT)
        t = rng.gamma(np.maximum(k, 1).astype(float)) / (n * rate)
        t[k == 0] = math.inf
        return t, k, viol

    parts = _run_chunks(one, _chunks(paths, _CHAIN_CHUNK), workers)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]))


def one_sided_marks(marks: MarkModel, side):
    """Marks restricted to one side of the book, moved onto the ask slots.

    The bid (or ask) types keep their relative probabilities and size laws
    and occupy types 3..5, so the ask queue of the chain follows the chosen
    queue on its own event clock of intensity ``lam * P(side)``.
    """
    idx = (0, 1, 2) if side == "bid" else (3, 4, 5)
    p = np.array([marks.p[i] for i in idx])
    if p.sum() <= 0:
        raise ValueError(f"no {side} events")
    p = p / p.sum()
    laws = (Constant(1.0),) * 3 + tuple(marks.laws[i] for i in idx)
    return MarkModel(p=(0.0, 0.0, 0.0) + tuple(p), laws=laws), float(sum(marks.p[i] for i in idx))


def tau_fluctuation_experiment(regime: Regime = REFERENCE_REGIME, n=10_000, paths=10_000, seed=0,
                               workers=1, mode="quadrature", depletion_sides=("bid", "ask"),
                               depletion_paths=None, p_min=0.01, z_max=3.0):
    """KS tests of the scaled execution and depletion time fluctuations.

    The execution time is compared with N(0, sigma_Y^2(tau^z-) / a^2); each
    depletion time with the delta-method Gaussian (hard) and the published
    scale (reported).
    """
    t0 = time.perf_counter()
    fl = regime.fluid()
    marks = regime.mark_model()
    arrival = pp.Poisson(regime.lam)
    mom = flow_moments(marks, regime.lam, pp.clt_variance(arrival))
    tau_a, tau_b, tau_z = fluid_hitting_times(fl)
    rep = ExperimentReport(
        name="tau_fluctuation",
        params={"regime": regime.to_dict(), "variance_mode": mode, "tau_z": tau_z,
                "tau_b": tau_b, "tau_a": tau_a, "depletion_sides": list(depletion_sides)},
        sizes={"n": int(n), "paths": int(paths), "seed": int(seed), "batches": BATCHES},
    )
    cap = int(1.5 * n * regime.lam * max(tau_z, 1.0)) + 1000
    t_z, _, viol = _chain_hitting_times(marks, n, (regime.qb, regime.qa, regime.z), paths, seed,
                                        regime.lam, 2, cap, workers)
    s2 = fluctuation_variance_at_execution(fl, mom, mode)
    sd = math.sqrt(s2) / fl.a
    x = math.sqrt(n) * (t_z - tau_z)
    uncrossed = int(np.sum(~np.isfinite(x)))
    d, p = ks_test(x, lambda y: norm_cdf(y / sd))
    tail, tail_se = batch_mean_se((x >= 0).astype(float))
    rep.statistics.update({"ks_statistic": d, "ks_p_value": p, "mean": float(np.mean(x)),
                           "std": float(np.std(x, ddof=1)), "tail_at_zero": float(tail),
                           "uncrossed_paths": uncrossed, "invariant_violations": int(viol.sum())})
    rep.targets.update({"sigma_y2": s2, "std": sd, "tail_at_zero": 0.5, "ks_p_value_min": p_min})
    rep.standard_errors["tail_at_zero"] = float(tail_se)
    rep.check("execution_ks", uncrossed == 0 and p > p_min, f"KS p > {p_min}")
    rep.check("tail_at_zero", abs(_zscore(float(tail), 0.5, float(tail_se))) <= z_max,
              f"|z| <= {z_max}", hard=False)
    for side in depletion_sides:
        m1, share = one_sided_marks(marks, side)
        tau = tau_b if side == "bid" else tau_a
        if not math.isfinite(tau):
            rep.notes.append(f"{side} queue does not deplete in the fluid limit; skipped")
            continue
        q = regime.qb if side == "bid" else regime.qa
        big = 1e300
        m_paths = paths if depletion_paths is None else int(depletion_paths)
        cap_s = int(1.5 * n * regime.lam * share * tau) + 1000
        # separate streams from the execution-time run
        base = (1 if side == "bid" else 2) << 44
        t_d, _, _ = _chain_hitting_times(m1, n, (big, q, big), m_paths, seed, regime.lam * share,
                                         1, cap_s, workers, stream_base=base)
        xd = math.sqrt(n) * (t_d - tau)
        for form in ("delta", "published"):
            d_s, p_s = ks_test(xd, lambda y, f=form: 1.0 - depletion_time_fluct_cdf(side, fl, mom.psi, y, f))
            rep.statistics[f"{side}_ks_{form}"] = {"statistic": d_s, "p_value": p_s}
            rep.check(f"{side}_depletion_ks_{form}", p_s > p_min, f"KS p > {p_min}",
                      hard=(form == "delta"))
        rep.statistics[f"{side}_std"] = float(np.std(xd, ddof=1))
        rep.sizes[f"{side}_paths"] = m_paths
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# Markov-chain driven product whose limit differs from the naive SDE limit
# --------------------------------------------------------------------------

def example1_exact_moment(n, power, stay=0.75):
    """E[Y_n(1)^power] for Y_n = prod (1 + X_i / sqrt(n)), exact via a 2x2 transfer matrix.

    The chain starts from its stationary law (1/2, 1/2).
    """
    h = 1.0 / math.sqrt(n)
    g = np.array([(1.0 + h) ** power, (1.0 - h) ** power])
    P = np.array([[stay, 1.0 - stay], [1.0 - stay, stay]])
    M = P * g[None, :]
    v = 0.5 * g
    # M^(n-1) by binary powering; each matrix carries a separate log scale
    acc, acc_log = np.eye(2), 0.0
    base, base_log = M, 0.0
    k = n - 1
    while k:
        if k & 1:
            acc = acc @ base
            acc_log += base_log
            s = np.abs(acc).max()
            acc, acc_log = acc / s, acc_log + math.log(s)
        k >>= 1
        if k:
            base = base @ base
            base_log *= 2.0
            s = np.abs(base).max()
            base, base_log = base / s, base_log + math.log(s)
    return float(v @ acc @ np.ones(2)) * math.exp(acc_log)


def example1_demo(paths=100_000, n=10_000, seed=0, workers=1, stay=0.75, z_target=5.0,
                  z_naive=10.0, var_rel_tol=0.05):
    """Second moment of Y_n(1) = prod (1 + X_i / sqrt(n)) for a sticky +-1 chain.

    The chain has long-run variance 3.  Its product converges to
    exp(sqrt(3) B(1) - 1/2), whose second moment is e^5, while the SDE driven
    naively by the limit of the sums gives exp(sqrt(3) B(1) - 3/2) with second
    moment e^3.  The second moment is estimated under the chain tilted by the
    one-step squared factors, with likelihood-ratio weights; the plain
    estimator is reported alongside.
    """
    t0 = time.perf_counter()
    n = int(n)
    h = 1.0 / math.sqrt(n)
    flip = 1.0 - stay

    def chain(p_up0, f_up, f_down, stream_base):
        def one(start, stop):
            up = np.empty(stop - start, dtype=np.int64)
            last = np.empty(stop - start, dtype=np.int64)
            _k.sign_chain(np.uint64(seed), np.uint64(stream_base + start), stop - start, n,
                          p_up0, f_up, f_down, up, last)
            return up, last
        parts = _run_chunks(one, _chunks(paths, _EXAMPLE_CHUNK), workers)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    up, _ = chain(0.5, flip, flip, 0)
    log_y = up * math.log1p(h) + (n - up) * math.log1p(-h)
    y = np.exp(log_y)
    s = (2.0 * up - n) / math.sqrt(n)
    mean_y, mean_y_se = batch_mean_se(y)
    plain2, plain2_se = batch_mean_se(y * y)
    var_s = float(np.var(s, ddof=1))

    # tilted chain: transitions weighted by the next squared factor
    gp, gm = (1.0 + h) ** 2, (1.0 - h) ** 2
    c0 = 0.5 * (gp + gm)
    cp = stay * gp + flip * gm
    cm = stay * gm + flip * gp
    up_t, last_t = chain(0.5 * gp / c0, flip * gm / cp, flip * gp / cm, 1 << 40)
    u_prev = up_t - (last_t > 0)
    w = np.exp(math.log(c0) + u_prev * math.log(cp) + (n - 1 - u_prev) * math.log(cm))
    second, second_se = batch_mean_se(w)

    e5, e3 = math.exp(5.0), math.exp(3.0)
    rep = ExperimentReport(
        name="example1",
        params={"stay_probability": stay, "estimator": "tilted chain with likelihood ratio"},
        sizes={"n": n, "paths": int(paths), "seed": int(seed), "batches": BATCHES},
        statistics={"mean_y": float(mean_y), "second_moment": float(second),
                    "second_moment_plain": float(plain2), "sum_variance": var_s,
                    "z_correct": _zscore(float(second), e5, float(second_se)),
                    "z_naive": _zscore(float(second), e3, float(second_se))},
        targets={"mean_y": math.e, "second_moment_correct_limit": e5,
                 "second_moment_naive_limit": e3, "sum_variance": 3.0,
                 "second_moment_exact_finite_n": example1_exact_moment(n, 2, stay),
                 "mean_y_exact_finite_n": example1_exact_moment(n, 1, stay)},
        standard_errors={"mean_y": float(mean_y_se), "second_moment": float(second_se),
                         "second_moment_plain": float(plain2_se)},
    )
    zc = rep.statistics["z_correct"]
    zn = rep.statistics["z_naive"]
    rep.check("finite", bool(np.isfinite([second, mean_y, var_s]).all()), "finite statistics")
    rep.check("second_moment_correct", abs(zc) <= z_target, f"|z| <= {z_target} vs e^5")
    rep.check("second_moment_not_naive", abs(zn) > z_naive, f"|z| > {z_naive} vs e^3")
    rep.check("sum_variance", abs(var_s / 3.0 - 1.0) <= var_rel_tol, f"relative error <= {var_rel_tol}")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

SYMMETRIC = DiffusionParams(mu=(0.0, 0.0), sigma1=1.0, sigma2=1.0, rho=0.0,
                            qb=1.0 / math.sqrt(2.0), qa=1.0 / math.sqrt(2.0))
SQRT3 = DiffusionParams(mu=(0.0, 0.0), sigma1=1.0, sigma2=1.0, rho=0.0,
                        qb=math.sqrt(3.0) / 2.0, qa=0.5)


def _suite_plan(scale):
    full = scale == "full"
    return {
        "fluid": lambda s, w: [fluid_convergence_experiment(paths=20 if full else 5, seed=s, workers=w,
                                                            n_list=(100, 1000, 10000) if full else (100, 1000))],
        "covariance": lambda s, w: [covariance_experiment(n=1000, paths=10_000 if full else 2000,
                                                          seed=s, workers=w)],
        "hitting": lambda s, w: [
            hitting_probability_experiment(SYMMETRIC, paths=100_000 if full else 10_000, seed=s, workers=w),
            hitting_probability_experiment(SQRT3, paths=100_000 if full else 10_000, seed=s, workers=w),
            hitting_probability_experiment(SYMMETRIC, paths=100_000 if full else 5000, seed=s, workers=w,
                                           method="euler", times=(0.1, 0.5, 1.0), check_decrease=False)],
        "tau": lambda s, w: [tau_fluctuation_experiment(n=10_000 if full else 1000,
                                                        paths=10_000 if full else 1000, seed=s, workers=w,
                                                        depletion_sides=() if full else ("bid", "ask"))],
        "example1": lambda s, w: [example1_demo(paths=100_000 if full else 10_000, n=10_000,
                                                seed=s, workers=w)],
    }


SUITES = ("all", "quick", "fluid", "covariance", "hitting", "tau", "example1")


def run_suite(name="all", seed=0, workers=1):
    """Run a named suite; ``all`` uses the full acceptance sizes, ``quick`` small ones."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    plan = _suite_plan("quick" if name == "quick" else "full")
    keys = list(plan) if name in ("all", "quick") else [name]
    reports = []
    for k in keys:
        reports.extend(plan[k](seed, workers))
    return reports
