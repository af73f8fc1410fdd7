"""Worker comparison laws and prior densities.

A worker with reliability ``rho`` who compares a pair with quality
difference ``d`` answers 0 (prefers the first object) with probability
``F(rho * d)``.  Two laws are provided, the logistic (BTL) and the
Gaussian-CDF (Thurstone) one.  Everything else in the package only needs
``F`` and its first two derivatives, plus the log-domain helpers below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .errors import BoundaryError, DomainError, ParameterError, StateError

#: F outputs are clamped to [F_CLAMP, 1 - F_CLAMP].
F_CLAMP = 1e-15

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class WorkerModel(enum.Enum):
    """Comparison law ``F``; all methods are vectorized over ``x``."""

    BTL = "btl"
    THURSTONE = "thurstone"

    @property
    def code(self) -> int:
        # integer tag understood by the compiled kernels
        return 0 if self is WorkerModel.BTL else 1

    @classmethod
    def parse(cls, value: "str | WorkerModel") -> "WorkerModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown worker model {value!r}") from None

    def F(self, x):
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            return special.expit(x)
        return special.ndtr(x)

    def dF(self, x):
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            s = special.expit(x)
            return s * special.expit(-x)
        return np.exp(-0.5 * x * x) / _SQRT2PI

    def d2F(self, x):
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            s = special.expit(x)
            t = special.expit(-x)
            return s * t * (t - s)
        return -x * np.exp(-0.5 * x * x) / _SQRT2PI

    def logF(self, x):
        """``log F(x)`` evaluated in the log domain (finite for finite x)."""
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            return special.log_expit(x)
        return special.log_ndtr(x)

    def dlogF(self, x):
        """``F'(x) / F(x)``."""
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            return special.expit(-x)
        return _SQRT_2_OVER_PI / special.erfcx(-x / _SQRT2)

    def d2logF(self, x):
        """``(F'' F - F'^2) / F^2``, the curvature of ``log F``."""
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            return -special.expit(x) * special.expit(-x)
        m = _SQRT_2_OVER_PI / special.erfcx(-x / _SQRT2)
        return -m * (x + m)

    def fisher(self, x):
        """``F'(x)^2 / (F(x) (1 - F(x)))``; even in ``x``."""
        x = np.asarray(x, dtype=float)
        if self is WorkerModel.BTL:
            return special.expit(x) * special.expit(-x)
        return (_SQRT_2_OVER_PI / special.erfcx(-x / _SQRT2)) * (
            _SQRT_2_OVER_PI / special.erfcx(x / _SQRT2))


def _check_finite(x) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"argument must be finite, got {x}")
    return x


def eval_F(model: WorkerModel, x: float) -> float:
    """Probability of a 0 answer at scaled difference ``x``, clamped away from {0, 1}."""
    x = _check_finite(x)
    return float(np.clip(model.F(x), F_CLAMP, 1.0 - F_CLAMP))


def eval_F_derivs(model: WorkerModel, x: float) -> tuple[float, float, float]:
    x = _check_finite(x)
    return eval_F(model, x), float(model.dF(x)), float(model.d2F(x))


def answer_probability(model: WorkerModel, rho: float, d: float, w: int) -> float:
    """P(w | rho, d) = F((1 - 2w) rho d)."""
    if not rho > 0:
        raise DomainError(f"reliability must be positive, got {rho}")
    if w not in (0, 1):
        raise DomainError(f"answer must be 0 or 1, got {w}")
    return eval_F(model, (1 - 2 * w) * rho * d)


# ---------------------------------------------------------------------------
# priors


class LogDensityDerivs(NamedTuple):
    logf: float
    dlogf: float
    d2logf: float
    kink: bool = False


class Prior:
    """Base class for one-dimensional prior densities on a closed interval.

    Subclasses implement the vectorized ``pdf``, ``_log_derivs`` (returning
    ``(log f, (log f)', (log f)'')`` arrays, meaningful on the open support)
    and ``sample``.
    """

    kind: str = ""

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def _log_derivs(self, x):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def to_record(self) -> dict:
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        """Interior points where the density is not smooth (quadrature hints)."""
        return []

    def kinks(self) -> list[float]:
        """Points where the log-density is not differentiable."""
        return []

    @property
    def mean(self) -> float:
        lo, hi = self.support
        val, _ = integrate.quad(lambda t: t * float(self.pdf(t)), lo, hi,
                                points=self.breakpoints() or None, limit=200)
        return val

    def integral(self) -> float:
        """Numerical integral of the density over its support."""
        lo, hi = self.support
        val, _ = integrate.quad(lambda t: float(self.pdf(t)), lo, hi,
                                points=self.breakpoints() or None,
                                epsabs=1e-12, epsrel=1e-12, limit=200)
        return val

    def logpdf_derivs(self, x):
        """Vectorized ``(log f, (log f)', (log f)'')``; NaN/-inf off the open support."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x > lo) & (x < hi)
        out = self._log_derivs(np.where(inside, x, 0.5 * (lo + hi) if math.isfinite(lo + hi) else 0.0))
        logf = np.where(inside, out[0], -np.inf)
        d1 = np.where(inside, out[1], np.nan)
        d2 = np.where(inside, out[2], np.nan)
        return logf, d1, d2


def prior_logdensity_derivs(p: Prior, x: float) -> LogDensityDerivs:
    """Scalar log-density and its derivatives; raises on or outside the support."""
    x = _check_finite(x)
    lo, hi = p.support
    if not lo < x < hi:
        raise BoundaryError(f"x={x} is not inside the open support ({lo}, {hi})")
    logf, d1, d2 = (float(v) for v in p.logpdf_derivs(x))
    kink = x in p.kinks()
    if kink:
        d1 = float("nan")
        d2 = float("nan")
    return LogDensityDerivs(logf, d1, d2, kink)


def sample_prior(p: Prior, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError("sample size must be at least 1")
    return p.sample(rng, n)


@dataclass(frozen=True)
class Uniform(Prior):
    a: float
    b: float
    kind = "uniform"

    def __post_init__(self):
        if not self.b > self.a:
            raise ParameterError("Uniform needs a < b")

    @property
    def support(self):
        return (self.a, self.b)

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def _log_derivs(self, x):
        z = np.zeros_like(x)
        return z - math.log(self.b - self.a), z, z

    def sample(self, rng, n):
        return rng.uniform(self.a, self.b, size=n)

    def to_record(self):
        return {"kind": self.kind, "params": {"a": self.a, "b": self.b}}


@dataclass(frozen=True)
class Gaussian(Prior):
    mu: float
    var: float
    kind = "gaussian"

    def __post_init__(self):
        if not self.var > 0:
            raise ParameterError("Gaussian needs a positive variance")

    @property
    def support(self):
        return (-math.inf, math.inf)

    @property
    def mean(self) -> float:
        return self.mu

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x - self.mu) ** 2 / self.var) / math.sqrt(2 * math.pi * self.var)

    def _log_derivs(self, x):
        r = x - self.mu
        logf = -0.5 * r * r / self.var - 0.5 * math.log(2 * math.pi * self.var)
        return logf, -r / self.var, np.full_like(x, -1.0 / self.var)

    def logpdf_derivs(self, x):
        return self._log_derivs(np.asarray(x, dtype=float))

    def sample(self, rng, n):
        return rng.normal(self.mu, math.sqrt(self.var), size=n)

    def integral(self) -> float:
        val, _ = integrate.quad(lambda t: float(self.pdf(t)), -math.inf, math.inf,
                                epsabs=1e-12, epsrel=1e-12)
        return val

    def to_record(self):
        return {"kind": self.kind, "params": {"mu": self.mu, "var": self.var}}


@dataclass(frozen=True)
class PlanckTaper(Prior):
    """C-infinity window approximating Uniform(a, b); ``z`` is the taper length.

    Rising taper on (a, a+z), plateau at ``C_p = 1/(b-a-z)`` and the mirror
    image on (b-z, b).  Each taper integrates to ``C_p z / 2``.
    """

    a: float
    b: float
    z: float
    kind = "planck_taper"

    def __post_init__(self):
        if not self.b > self.a:
            raise ParameterError("PlanckTaper needs a < b")
        if not 0 < self.z <= 0.5 * (self.b - self.a):
            raise ParameterError("PlanckTaper needs 0 < z <= (b - a) / 2")

    @classmethod
    def smoothing(cls, a: float, b: float, fraction: float = 0.2) -> "PlanckTaper":
        return cls(a, b, fraction * (b - a))

    @property
    def support(self):
        return (self.a, self.b)

    @property
    def height(self) -> float:
        return 1.0 / (self.b - self.a - self.z)

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def _taper_arg(self, x):
        """Exponent ``g`` and its two derivatives so that f = C_p / (1 + e^g).

        ``g`` is -inf on the plateau; the falling side is the reflection of
        the rising one.
        """
        a, b, z = self.a, self.b, self.z
        g = np.full_like(x, -np.inf)
        g1 = np.zeros_like(x)
        g2 = np.zeros_like(x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            left = (x > a) & (x < a + z)
            u = x[left] - a
            v = z - u
            g[left] = z * (1.0 / u - 1.0 / v)
            g1[left] = z * (-1.0 / u**2 - 1.0 / v**2)
            g2[left] = z * (2.0 / u**3 - 2.0 / v**3)
            right = (x > b - z) & (x < b)
            u = b - x[right]
            v = z - u
            g[right] = z * (1.0 / u - 1.0 / v)
            # d/dx = -d/du
            g1[right] = -z * (-1.0 / u**2 - 1.0 / v**2)
            g2[right] = z * (2.0 / u**3 - 2.0 / v**3)
        return g, g1, g2

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        g, _, _ = self._taper_arg(flat)
        inside = (flat > self.a) & (flat < self.b)
        return np.where(inside, self.height * special.expit(-g), 0.0).reshape(x.shape)

    def _log_derivs(self, x):
        x = np.asarray(x, dtype=float)
        g, g1, g2 = self._taper_arg(x.reshape(-1))
        s = special.expit(g)
        logf = math.log(self.height) + special.log_expit(-g)
        d1 = -s * g1
        d2 = -s * (1.0 - s) * g1 * g1 - s * g2
        return logf.reshape(x.shape), d1.reshape(x.shape), d2.reshape(x.shape)

    def breakpoints(self):
        return [self.a + self.z, self.b - self.z]

    def integral(self) -> float:
        lo, hi = self.support
        pts = [lo, lo + self.z, hi - self.z, hi]
        total = 0.0
        for u, v in zip(pts[:-1], pts[1:]):
            if v > u:
                val, _ = integrate.quad(lambda t: float(self.pdf(t)), u, v,
                                        epsabs=1e-13, epsrel=1e-13, limit=200)
                total += val
        return total

    def sample(self, rng, n):
        a, b, z = self.a, self.b, self.z
        c = self.height
        p_plateau = c * (b - a - 2 * z)
        out = np.empty(n)
        on_plateau = rng.random(n) < p_plateau
        k = int(on_plateau.sum())
        out[on_plateau] = rng.uniform(a + z, b - z, size=k)
        m = n - k
        tapers = np.empty(0)
        # rejection from Uniform(0, z) with acceptance 1/(1+e^g), rate 1/2
        while tapers.size < m:
            need = m - tapers.size
            u = rng.uniform(0.0, z, size=2 * need + 16)
            with np.errstate(divide="ignore", over="ignore"):
                g = z * (1.0 / u - 1.0 / (z - u))
            keep = rng.random(u.size) < special.expit(-g)
            tapers = np.concatenate([tapers, u[keep]])
        tapers = tapers[:m]
        left = rng.random(m) < 0.5
        out[~on_plateau] = np.where(left, a + tapers, b - tapers)
        return out

    def to_record(self):
        return {"kind": self.kind, "params": {"a": self.a, "b": self.b, "z": self.z}}


@dataclass(frozen=True)
class TriangularDifference(Prior):
    """Density of ``q1 - q2`` for ``q1, q2`` i.i.d. Uniform(a, b)."""

    a: float
    b: float
    kind = "triangular_difference"

    def __post_init__(self):
        if not self.b > self.a:
            raise ParameterError("TriangularDifference needs a < b")

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def support(self):
        return (-self.width, self.width)

    @property
    def mean(self) -> float:
        return 0.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        w = self.width
        return np.where(np.abs(x) <= w, (1.0 - np.abs(x) / w) / w, 0.0)

    def _log_derivs(self, x):
        w = self.width
        r = w - np.abs(x)
        with np.errstate(divide="ignore"):
            logf = np.log(r) - 2 * math.log(w)
        return logf, -np.sign(x) / r, -1.0 / r**2

    def breakpoints(self):
        return [0.0]

    def kinks(self):
        return [0.0]

    def sample(self, rng, n):
        return rng.uniform(self.a, self.b, n) - rng.uniform(self.a, self.b, n)

    def to_record(self):
        return {"kind": self.kind, "params": {"a": self.a, "b": self.b}}


@dataclass(frozen=True, eq=False)
class Empirical(Prior):
    """Tabulated density: piecewise linear through ``(grid, values)``.

    Built from samples (:meth:`from_samples`) or from a numerical
    convolution (:func:`difference_density`).
    """

    grid: np.ndarray | None = None
    values: np.ndarray | None = field(default=None, repr=False)
    kind = "empirical"

    def __post_init__(self):
        if self.grid is None:
            return
        grid = np.asarray(self.grid, dtype=float)
        vals = np.clip(np.asarray(self.values, dtype=float), 0.0, None)
        if grid.ndim != 1 or grid.size < 2 or vals.shape != grid.shape:
            raise ParameterError("Empirical needs matching 1-D grid and values")
        if np.any(np.diff(grid) <= 0):
            raise ParameterError("Empirical grid must be strictly increasing")
        vals = vals / integrate.trapezoid(vals, grid)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_samples(cls, data, bins: int = 256) -> "Empirical":
        data = np.asarray(data, dtype=float)
        if data.size == 0:
            raise StateError("Empirical prior needs data")
        hist, edges = np.histogram(data, bins=bins, density=True)
        mids = 0.5 * (edges[1:] + edges[:-1])
        grid = np.concatenate([[edges[0]], mids, [edges[-1]]])
        vals = np.concatenate([[hist[0]], hist, [hist[-1]]])
        return cls(grid, vals)

    def _require(self):
        if self.grid is None:
            raise StateError("Empirical prior has no data")

    @property
    def support(self):
        self._require()
        return (float(self.grid[0]), float(self.grid[-1]))

    def pdf(self, x):
        self._require()
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def _log_derivs(self, x):
        self._require()
        h = 1e-4 * (self.grid[-1] - self.grid[0])
        with np.errstate(divide="ignore"):
            lf = lambda t: np.log(self.pdf(t))  # noqa: E731
            f0, fp, fm = lf(x), lf(x + h), lf(x - h)
        return f0, (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / h**2

    def cdf_table(self):
        self._require()
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.grid))])
        return cdf / cdf[-1]

    def sample(self, rng, n):
        self._require()
        return np.interp(rng.random(n), self.cdf_table(), self.grid)

    @property
    def mean(self) -> float:
        self._require()
        return float(integrate.trapezoid(self.grid * self.values, self.grid))

    def integral(self) -> float:
        self._require()
        return float(integrate.trapezoid(self.values, self.grid))

    def to_record(self):
        self._require()
        return {"kind": self.kind,
                "params": {"grid": self.grid.tolist(), "values": self.values.tolist()}}


@lru_cache(maxsize=32)
def difference_density(fq: Prior, n_grid: int = 4096) -> Prior:
    """Density of ``q1 - q2`` for i.i.d. ``q ~ fq``.

    Closed form for uniform priors; numerical self-convolution otherwise.
    """
    if isinstance(fq, Uniform):
        return TriangularDifference(fq.a, fq.b)
    lo, hi = fq.support
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = fq.mean - 10 * math.sqrt(_variance(fq)), fq.mean + 10 * math.sqrt(_variance(fq))
    x = np.linspace(lo, hi, n_grid)
    h = x[1] - x[0]
    f = np.asarray(fq.pdf(x), dtype=float)
    # density of -q is f reversed; full convolution spans [lo - hi, hi - lo]
    conv = np.convolve(f, f[::-1]) * h
    grid = (np.arange(conv.size) - (n_grid - 1)) * h
    conv = 0.5 * (conv + conv[::-1])
    return Empirical(grid, conv)


def _variance(p: Prior) -> float:
    if isinstance(p, Gaussian):
        return p.var
    lo, hi = p.support
    m = p.mean
    val, _ = integrate.quad(lambda t: (t - m) ** 2 * float(p.pdf(t)), lo, hi, limit=200)
    return val


_PRIOR_KINDS = {
    "uniform": lambda p: Uniform(float(p["a"]), float(p["b"])),
    "gaussian": lambda p: Gaussian(float(p["mu"]), float(p["var"])),
    "planck_taper": lambda p: PlanckTaper(float(p["a"]), float(p["b"]), float(p["z"])),
    "triangular_difference": lambda p: TriangularDifference(float(p["a"]), float(p["b"])),
    "empirical": lambda p: Empirical(np.asarray(p["grid"]), np.asarray(p["values"]))
    if p.get("grid") is not None else Empirical(),
}


def prior_from_record(record: dict) -> Prior:
    """Build a prior from a ``{kind, params}`` config record."""
    try:
        kind = record["kind"]
        build = _PRIOR_KINDS[kind]
    except KeyError:
        raise ParameterError(f"bad prior record {record!r}") from None
    return build(record.get("params", {}))
