"""Order-size marks and the covariance objects of the centered flow.

Each order carries a six-vector of sizes with exactly one positive entry,
indexed by type: bid limit, bid market, bid cancel, ask limit, ask market,
ask cancel.  The mark model is i.i.d.: a categorical type draw followed by a
size from that type's law.
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .kernels import active as _k

TYPE_NAMES = ("bb", "mbb", "cbb", "ba", "mba", "cba")
CONVENTIONS = ("diffusion-theorem", "paper-psiij", "counting-clt")


# --------------------------------------------------------------------------
# size laws
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    size: float
    code = 0

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError("constant size must be positive")

    @property
    def params(self):
        return self.size, 0.0

    def mean(self):
        return self.size

    def second_moment(self):
        return self.size ** 2

    theta_max = math.inf

    def mgf(self, th):
        th = np.asarray(th, dtype=float)
        e = np.exp(th * self.size)
        return e, self.size * e, self.size ** 2 * e


@dataclass(frozen=True)
class Exponential:
    mean_size: float
    code = 1

    def __post_init__(self):
        if not self.mean_size > 0:
            raise ValueError("exponential mean must be positive")

    @property
    def params(self):
        return self.mean_size, 0.0

    def mean(self):
        return self.mean_size

    def second_moment(self):
        return 2.0 * self.mean_size ** 2

    @property
    def theta_max(self):
        return 1.0 / self.mean_size

    def mgf(self, th):
        m = self.mean_size
        d = 1.0 - m * np.asarray(th, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = d > 0
            inv = np.where(ok, 1.0 / np.where(ok, d, 1.0), np.inf)
        return inv, m * inv ** 2, 2.0 * m * m * inv ** 3


@dataclass(frozen=True)
class GeometricInteger:
    """Integer sizes 1, 2, ... with P(k) = p (1-p)^(k-1), p = 1/mean."""

    mean_size: float
    code = 2

    def __post_init__(self):
        if not self.mean_size >= 1:
            raise ValueError("geometric mean must be at least 1")

    @property
    def params(self):
        return self.mean_size, 0.0

    def mean(self):
        return self.mean_size

    def second_moment(self):
        p = 1.0 / self.mean_size
        return (2.0 - p) / p ** 2

    @property
    def theta_max(self):
        p = 1.0 / self.mean_size
        return math.inf if p >= 1.0 else -math.log1p(-p)

    def mgf(self, th):
        p = 1.0 / self.mean_size
        e = np.exp(np.asarray(th, dtype=float))
        q = 1.0 - p
        d = 1.0 - q * e
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = d > 0
            d = np.where(ok, d, 1.0)
            m0 = np.where(ok, p * e / d, np.inf)
            m1 = np.where(ok, p * e / d ** 2, np.inf)
            m2 = np.where(ok, p * e * (1.0 + q * e) / d ** 3, np.inf)
        return m0, m1, m2


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(96)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LogNormal:
    mu_ln: float
    sigma_ln: float
    code = 3

    def __post_init__(self):
        if not self.sigma_ln >= 0:
            raise ValueError("lognormal sigma must be nonnegative")

    @property
    def params(self):
        return self.mu_ln, self.sigma_ln

    def mean(self):
        return math.exp(self.mu_ln + 0.5 * self.sigma_ln ** 2)

    def second_moment(self):
        return math.exp(2.0 * self.mu_ln + 2.0 * self.sigma_ln ** 2)

    # finite only for theta <= 0; the boundary itself is attainable
    theta_max = 0.0

    def mgf(self, th):
        th = np.atleast_1d(np.asarray(th, dtype=float))
        s = np.exp(self.mu_ln + self.sigma_ln * _GH_NODES)
        out = []
        for k in range(3):
            vals = np.full(th.shape, np.inf)
            ok = th <= 0
            if ok.any():
                vals[ok] = (s[None, :] ** k * np.exp(th[ok, None] * s[None, :])) @ _GH_WEIGHTS
            out.append(vals)
        return tuple(out)


SizeLaw = (Constant, Exponential, GeometricInteger, LogNormal)


# --------------------------------------------------------------------------
# mark model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkModel:
    """i.i.d. six-type marks: categorical type with probabilities ``p``, then a size."""

    p: Tuple[float, ...]
    laws: Tuple = field(default_factory=lambda: tuple(Constant(1.0) for _ in range(6)))

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (6,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("type probabilities must be a 6-vector in the simplex")
        if len(self.laws) != 6 or not all(isinstance(l, SizeLaw) for l in self.laws):
            raise ValueError("need one size law per type")
        object.__setattr__(self, "p", tuple(float(x) for x in p))
        object.__setattr__(self, "laws", tuple(self.laws))

    @classmethod
    def constant(cls, sizes: Sequence[float], p=None):
        p = (1.0 / 6,) * 6 if p is None else p
        return cls(p=tuple(p), laws=tuple(Constant(float(s)) for s in sizes))

    @classmethod
    def from_mean_vector(cls, vbar: Sequence[float]):
        """Uniform types with Constant(6 * vbar_j) sizes, so the mean vector is ``vbar``.

        Types with zero mean get probability zero and the rest are renormalized
        only if some ``vbar_j`` vanish.
        """
        vbar = np.asarray(vbar, dtype=float)
        if np.any(vbar < 0) or not np.any(vbar > 0):
            raise ValueError("mean vector must be nonnegative and nonzero")
        live = vbar > 0
        p = np.where(live, 1.0 / live.sum(), 0.0)
        sizes = np.where(live, vbar / np.where(live, p, 1.0), 1.0)
        return cls(p=tuple(p), laws=tuple(Constant(float(s)) for s in sizes))

    def kernel_arrays(self):
        """Arrays ``(cum_p, law_code, law_a, law_b)`` consumed by the kernels."""
        cum = np.cumsum(self.p)
        cum[-1] = 1.0
        code = np.array([l.code for l in self.laws], dtype=np.int64)
        a = np.array([l.params[0] for l in self.laws], dtype=np.float64)
        b = np.array([l.params[1] for l in self.laws], dtype=np.float64)
        return cum, code, a, b


def sample_marks(model, count, seed, stream=0):
    """Draw ``count`` i.i.d. mark vectors as a ``(count, 6)`` array."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    out = np.zeros((count, 6))
    if count == 0:
        return out
    types = np.empty(count, dtype=np.int64)
    sizes = np.empty(count)
    _k.sample_marks(seed, stream, count, *model.kernel_arrays(), types, sizes)
    out[np.arange(count), types] = sizes
    return out


def mean_vector(model):
    return np.array([p * law.mean() for p, law in zip(model.p, model.laws)])


def long_run_covariance(model):
    """Return ``(v2, rho, a)`` for i.i.d. marks (the lag sums vanish)."""
    vbar = mean_vector(model)
    second = np.array([p * law.second_moment() for p, law in zip(model.p, model.laws)])
    a = np.diag(second) - np.outer(vbar, vbar)
    a = 0.5 * (a + a.T)
    v2 = np.diag(a).copy()
    v = np.sqrt(np.maximum(v2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(np.outer(v, v) > 0, a / np.outer(v, v), 0.0)
    np.fill_diagonal(rho, np.where(v > 0, 1.0, 0.0))
    return v2, rho, a


def sigma_factor(a, tol=1e-10):
    """Lower-triangular factor of a positive semidefinite matrix.

    Negative eigenvalues are clipped at zero first (with a warning when the
    clipped mass exceeds ``1e-8 * trace``).  The symmetric square root
    ``V sqrt(W)`` is then brought to lower-triangular form by an LQ step, so
    singular and badly scaled covariances keep ``S S^T = a`` to rounding.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("need a square matrix")
    if np.max(np.abs(a - a.T), initial=0.0) > tol * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise ValueError("covariance matrix is not symmetric")
    a = 0.5 * (a + a.T)
    w, vecs = np.linalg.eigh(a)
    trace = max(float(np.trace(a)), 0.0)
    neg = -w[w < 0].sum()
    if neg > 1e-8 * max(trace, 1e-300):
        warnings.warn(f"covariance clipped to PSD (removed eigenvalue mass {neg:.3g})", RuntimeWarning)
    root = vecs * np.sqrt(np.maximum(w, 0.0))
    # root = L Q with L lower triangular: QR of root^T
    r = np.linalg.qr(root.T, mode="r")
    L = r.T
    signs = np.where(np.diag(L) < 0, -1.0, 1.0)
    L = L * signs
    L[np.abs(L) <= 1e-300] = 0.0
    return L


def psi_matrix(sigma, vbar, vd2, lam, convention="diffusion-theorem"):
    """Covariance rate of the limiting centered flow.

    ``convention`` selects the weight of the arrival-count fluctuation term:

    * ``"diffusion-theorem"``: ``lam*S S^T + lam * vd2 * vbar vbar^T`` (default)
    * ``"paper-psiij"``: ``lam*S S^T + lam**3 * vd2 * vbar vbar^T``
    * ``"counting-clt"``: ``lam*S S^T + vd2 * vbar vbar^T``, the variance
      obtained when ``vd2`` is the CLT constant of N itself.

    All three agree at ``lam = 1``.
    """
    sigma = np.asarray(sigma, dtype=float)
    vbar = np.asarray(vbar, dtype=float)
    weight = {"diffusion-theorem": lam, "paper-psiij": lam ** 3, "counting-clt": 1.0}
    if convention not in weight:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    return lam * sigma @ sigma.T + weight[convention] * vd2 * np.outer(vbar, vbar)


@dataclass(frozen=True)
class FlowMoments:
    vbar: np.ndarray
    v2: np.ndarray
    rho: np.ndarray
    a: np.ndarray
    sigma: np.ndarray
    psi: np.ndarray
    lam: float
    vd2: float
    convention: str = "diffusion-theorem"

    def to_json(self):
        return json.dumps({
            "vbar": self.vbar.tolist(), "v2": self.v2.tolist(), "rho": self.rho.tolist(),
            "a": self.a.tolist(), "sigma": self.sigma.tolist(), "psi": self.psi.tolist(),
            "lambda": self.lam, "vd2": self.vd2, "convention": self.convention,
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        arr = {k: np.asarray(d[k], dtype=float) for k in ("vbar", "v2", "rho", "a", "sigma", "psi")}
        return cls(lam=float(d["lambda"]), vd2=float(d["vd2"]),
                   convention=d.get("convention", "diffusion-theorem"), **arr)


def flow_moments(model, lam, vd2, convention="diffusion-theorem"):
    """Bundle every covariance object for a mark model and arrival constants."""
    vbar = mean_vector(model)
    v2, rho, a = long_run_covariance(model)
    sigma = sigma_factor(a)
    psi = psi_matrix(sigma, vbar, vd2, lam, convention)
    return FlowMoments(vbar=vbar, v2=v2, rho=rho, a=a, sigma=sigma, psi=psi,
                       lam=float(lam), vd2=float(vd2), convention=convention)
