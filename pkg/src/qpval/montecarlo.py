"""Simulation oracles for the affine pricing formulas.

The composed measure is sampled structurally: public factor paths are drawn
under the pricing measure, then private factors are drawn conditionally on
the public path under the physical measure, then exponential thresholds are
drawn for the random times.  A density-weighted estimator (everything under
the physical measure, reweighted by the likelihood ratio of the public path)
is available as an independent cross-check.

Random numbers come from Philox keyed by ``(seed << 64) | stream``.  Work is
split into fixed-size chunks; chunk ``k`` uses the generator advanced by
``k`` jumps, so results do not depend on how chunks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .affine_engine import GaussianFactorModel, IntensitySpec, StockSpec
from .stopping_times import CapabilityError, Copula2, first_crossing, open_uniform

CHUNK_SIZE = 1 << 16
MASK64 = (1 << 64) - 1


class NumericError(ArithmeticError):
    """A payoff evaluated to a non-finite number."""


# ---------------------------------------------------------------------------
# RNG and containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSpec:
    """Counter-based stream identifier; ``(seed, stream)`` fixes every draw."""

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = int(getattr(self, name))
            if not 0 <= v <= MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")
            object.__setattr__(self, name, v)

    def generator(self, chunk: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(key=(self.seed << 64) | self.stream)
        if chunk:
            bitgen = bitgen.jumped(chunk)
        return np.random.Generator(bitgen)

    def child(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream & MASK64)


@dataclass(frozen=True)
class PathBatch:
    """Factor paths of shape ``(n, steps + 1, d)`` starting at absolute date ``t0``."""

    z: np.ndarray
    t0: int
    measure: str  # "P" or "QP"
    d1: int

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def steps(self) -> int:
        return self.z.shape[1] - 1

    @property
    def x(self) -> np.ndarray:
        return self.z[..., : self.d1]

    @property
    def y(self) -> np.ndarray:
        return self.z[..., self.d1 :]


@dataclass(frozen=True)
class QPEstimate:
    """Sample mean with its standard error ``std / sqrt(n_eff)``.

    ``n`` counts simulated paths; with antithetic pairs the standard error is
    computed from ``n / 2`` pair averages.
    """

    mean: float
    stderr: float
    n: int
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("an estimate needs at least two samples")

    def z_score(self, reference: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == reference else math.inf
        return (self.mean - reference) / self.stderr

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n,
                "seed": self.seed, "stream": self.stream}


class _Accumulator:
    """Chunk-ordered merge of count, mean and sum of squared deviations."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, values: np.ndarray) -> None:
        n = values.size
        if n == 0:
            return
        mean = float(values.mean())
        m2 = float(((values - mean) ** 2).sum())
        total = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / total
        self.m2 += m2 + delta * delta * self.count * n / total
        self.count = total

    def stderr(self) -> float:
        if self.count < 2:
            return math.nan
        return math.sqrt(self.m2 / (self.count - 1) / self.count)


# ---------------------------------------------------------------------------
# Model context
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationContext:
    """Everything a payoff may depend on: factor model, stock, up to two intensities
    and the copula coupling their thresholds."""

    model: GaussianFactorModel
    stock: StockSpec
    intensity1: IntensitySpec
    intensity2: IntensitySpec | None = None
    copula: Copula2 = field(default_factory=Copula2)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = cov`` for a positive semidefinite ``cov``."""
    if cov.size == 0:
        return cov.copy()
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _require_gaussian(model) -> None:
    if not isinstance(model, GaussianFactorModel):
        raise CapabilityError(f"no path sampler for model type {type(model).__name__}")


def _draw_paths(model: GaussianFactorModel, measure: str, m: int, steps: int, z_t, gen, antithetic: bool):
    d1, d2 = model.d1, model.d2
    half = m // 2 if antithetic else m
    if measure == "P":
        eps = gen.standard_normal((steps, half, model.dim))
        if antithetic:
            eps = np.concatenate([eps, -eps], axis=1)
        L = _psd_factor(model.sigma)
        z = np.empty((m, steps + 1, model.dim))
        z[:, 0] = z_t
        for k in range(steps):
            z[:, k + 1] = model.mu + z[:, k] @ model.theta.T + eps[k] @ L.T
        return z
    eps_y = gen.standard_normal((steps, half, d2))
    eps_x = gen.standard_normal((steps, half, d1))
    if antithetic:
        eps_y = np.concatenate([eps_y, -eps_y], axis=1)
        eps_x = np.concatenate([eps_x, -eps_x], axis=1)
    Ly = _psd_factor(model.sigma_yy)
    Lx = _psd_factor(model.cond_cov)
    z = np.empty((m, steps + 1, model.dim))
    z[:, 0] = z_t
    for k in range(steps):
        y_prev, x_prev = z[:, k, d1:], z[:, k, :d1]
        y = model.mu_q + y_prev @ model.theta_yy.T + eps_y[k] @ Ly.T
        x = model.cond_mean + x_prev @ model.theta_xx.T + y @ model.K.T + eps_x[k] @ Lx.T
        z[:, k + 1, d1:] = y
        z[:, k + 1, :d1] = x
    return z


def simulate_paths(
    model,
    measure: str,
    n: int,
    T: int,
    rng: RngSpec,
    t0: int = 0,
    z_t=None,
    antithetic: bool = False,
) -> PathBatch:
    """Simulate ``n`` factor paths from ``z_t`` at ``t0`` to ``T``.

    ``measure="P"`` uses the physical dynamics for all factors.  ``"Q"`` (or
    ``"QP"``) draws the public block under the pricing drift and the private
    block from its physical conditional law given the public path, which is
    the composed measure; the batch is tagged ``"QP"``.
    """
    _require_gaussian(model)
    if measure not in ("P", "Q", "QP"):
        raise ValueError(f"measure must be P, Q or QP, got {measure!r}")
    if T < t0:
        raise ValueError("horizon precedes start date")
    z_t = model.z0 if z_t is None else np.asarray(z_t, dtype=float)
    tag = "P" if measure == "P" else "QP"
    parts = []
    for k, m in enumerate(_chunks(n, antithetic)):
        parts.append(_draw_paths(model, tag, m, T - t0, z_t, rng.generator(k), antithetic))
    return PathBatch(np.concatenate(parts, axis=0), t0, tag, model.d1)


def _chunks(n: int, antithetic: bool) -> list[int]:
    if n < 1:
        raise ValueError("n must be positive")
    if antithetic and n % 2:
        raise ValueError("antithetic sampling needs an even number of paths")
    sizes = [CHUNK_SIZE] * (n // CHUNK_SIZE)
    if n % CHUNK_SIZE:
        sizes.append(n % CHUNK_SIZE)
    return sizes


# ---------------------------------------------------------------------------
# Payoffs
# ---------------------------------------------------------------------------


@dataclass
class PathView:
    """Quantities a payoff may read, all indexed by offset ``k = date - t0``."""

    t0: int
    stock: np.ndarray  # (m, steps+1)
    dlam1: np.ndarray  # Lambda1 increments since t0, (m, steps+1)
    dlam2: np.ndarray | None
    e1: np.ndarray  # thresholds, (m,)
    e2: np.ndarray | None

    def k(self, date: int) -> int:
        return date - self.t0

    def alive1(self, date: int) -> np.ndarray:
        """Survival of the first time past ``date``: ``dLambda1_date < E1``."""
        return self.dlam1[:, self.k(date)] < self.e1

    def alive2(self, date: int) -> np.ndarray:
        if self.dlam2 is None:
            raise ValueError("payoff needs a second intensity")
        return self.dlam2[:, self.k(date)] < self.e2

    def S(self, date: int) -> np.ndarray:
        return self.stock[:, self.k(date)]


@dataclass(frozen=True)
class Payoff:
    """Base class; subclasses implement :meth:`evaluate`."""

    T: int

    needs_second_time = False

    def evaluate(self, view: PathView) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPayoff(Payoff):
    value: float = 1.0

    def evaluate(self, view):
        return np.full(view.stock.shape[0], float(self.value))


@dataclass(frozen=True)
class StockPayoff(Payoff):
    """``S_T``."""

    def evaluate(self, view):
        return view.S(self.T)


@dataclass(frozen=True)
class SurvivalPayoff(Payoff):
    """``S_T`` on survival past ``T`` (strict) or past ``T - 1`` (lagged)."""

    mode: str = "strict"

    def evaluate(self, view):
        date = self.T if self.mode == "strict" else self.T - 1
        return view.S(self.T) * view.alive1(date)


@dataclass(frozen=True)
class TwoTimePayoff(Payoff):
    """``S_T`` on ``{first > T, second > s}`` (unprimed) or ``{first > s, second > T}`` (primed)."""

    s: int = 0
    mode: str = "unprimed"
    needs_second_time = True

    def evaluate(self, view):
        if self.mode == "unprimed":
            return view.S(self.T) * view.alive1(self.T) * view.alive2(self.s)
        return view.S(self.T) * view.alive1(self.s) * view.alive2(self.T)


@dataclass(frozen=True)
class SurrenderPayoff(Payoff):
    """``S_tau`` if the time falls strictly between ``t0`` and ``T``."""

    def evaluate(self, view):
        out = np.zeros(view.stock.shape[0])
        for i in range(view.t0 + 1, self.T):
            out += view.S(i) * (view.alive1(i - 1).astype(float) - view.alive1(i))
        return out


@dataclass(frozen=True)
class VASurrenderPayoff(Payoff):
    """``S_sigma`` if surrender ``sigma`` falls in ``(t0, T)`` and the insured is alive
    at ``sigma - 1``, i.e. ``sigma <= tau``."""

    needs_second_time = True

    def evaluate(self, view):
        out = np.zeros(view.stock.shape[0])
        for s in range(view.t0 + 1, self.T):
            died_now = view.alive1(s - 1).astype(float) - view.alive1(s)
            out += view.S(s) * died_now * view.alive2(s - 1)
        return out


@dataclass(frozen=True)
class ScheduledPayoff(Payoff):
    """Benefit plus the premiums no longer paid after termination.

    ``A`` is given by payment ``dates`` and ``amounts``; the termination time
    is the first date with ``dLambda1 >= E1``, capped at ``T``.
    """

    dates: tuple = ()
    amounts: tuple = ()
    benefit: Payoff | None = None

    def evaluate(self, view):
        m = view.stock.shape[0]
        base = np.zeros(m) if self.benefit is None else self.benefit.evaluate(view)
        steps = self.T - view.t0
        hit = first_crossing(view.dlam1[:, : steps + 1], view.e1)
        tau = np.minimum(view.t0 + hit, self.T)
        total = sum(self.amounts)
        paid = np.zeros(m)
        for date, amount in zip(self.dates, self.amounts):
            paid += amount * (date <= tau)
        return base + (total - paid)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def _view(ctx: SimulationContext, z: np.ndarray, t0: int, gen, second: bool, antithetic: bool) -> PathView:
    model = ctx.model
    m, width = z.shape[0], z.shape[1]
    dates = t0 + np.arange(width)
    x, y = z[..., : model.d1], z[..., model.d1 :]
    stock = np.exp(ctx.stock.a0 * dates + y @ ctx.stock.a)

    def dlam(spec: IntensitySpec):
        inc = x @ spec.b + y @ spec.c
        out = np.cumsum(inc, axis=1)
        return out - out[:, :1]

    if second:
        if ctx.intensity2 is None:
            raise ValueError("payoff needs a second intensity")
        e1, e2 = ctx.copula.sample_thresholds(m, gen, antithetic)
        return PathView(t0, stock, dlam(ctx.intensity1), dlam(ctx.intensity2), e1, e2)
    half = m // 2 if antithetic else m
    u = open_uniform(gen, half)
    if antithetic:
        u = np.concatenate([u, 1.0 - u])
    return PathView(t0, stock, dlam(ctx.intensity1), None, -np.log(u), None)


def _likelihood_ratio(model: GaussianFactorModel, z: np.ndarray) -> np.ndarray:
    """Density of the pricing law of the public path relative to the physical law."""
    s_yy = model.sigma_yy
    if model.d2 == 0:
        return np.ones(z.shape[0])
    if np.linalg.matrix_rank(s_yy) < model.d2:
        raise CapabilityError("density weighting needs a non-singular public covariance")
    prec = np.linalg.inv(s_yy)
    delta = model.mu_q - model.mu_y
    y = z[..., model.d1 :]
    resid = y[:, 1:] - model.mu_y - y[:, :-1] @ model.theta_yy.T
    log_lr = resid @ (prec @ delta) - 0.5 * float(delta @ prec @ delta)
    return np.exp(log_lr.sum(axis=1))


def estimate_qp_nested(
    payoff: Payoff,
    ctx: SimulationContext,
    n: int,
    rng: RngSpec,
    t: int = 0,
    z_t=None,
    antithetic: bool = False,
    method: str = "structural",
) -> QPEstimate:
    """Monte Carlo value of ``payoff`` under the composed measure, given survival to ``t``.

    ``method="structural"`` samples public paths under the pricing measure and
    private factors conditionally under the physical one; ``"density"``
    samples everything physically and reweights by the public likelihood ratio.
    """
    model = ctx.model
    _require_gaussian(model)
    if method not in ("structural", "density"):
        raise ValueError(f"unknown method {method!r}")
    if n < 2:
        raise ValueError("need at least two paths")
    if payoff.T < t:
        raise ValueError("payoff horizon precedes valuation date")
    z_t = model.z0 if z_t is None else np.asarray(z_t, dtype=float)
    measure = "QP" if method == "structural" else "P"
    acc = _Accumulator()
    for k, m in enumerate(_chunks(n, antithetic)):
        gen = rng.generator(k)
        z = _draw_paths(model, measure, m, payoff.T - t, z_t, gen, antithetic)
        view = _view(ctx, z, t, gen, payoff.needs_second_time, antithetic)
        values = np.asarray(payoff.evaluate(view), dtype=float)
        if method == "density":
            values = values * _likelihood_ratio(model, z)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NumericError(f"non-finite payoff in chunk {k}, path {bad}: state {z[bad, -1].tolist()}")
        if antithetic:
            values = 0.5 * (values[: m // 2] + values[m // 2 :])
        acc.add(values)
    stderr = acc.stderr()
    if acc.m2 == 0.0:
        stderr = 0.0
    return QPEstimate(acc.mean, stderr, n, rng.seed, rng.stream)


def estimate_product(product, ctx: SimulationContext | None, n: int, rng: RngSpec, antithetic: bool = False) -> QPEstimate:
    """Monte Carlo value of a product description.

    ``product`` must expose ``payoff()``, ``t``, ``z_t`` and (if ``ctx`` is
    None) ``context()``; the product classes in :mod:`qpval.products` do.
    """
    if ctx is None:
        ctx = product.context()
    return estimate_qp_nested(product.payoff(), ctx, n, rng, t=product.t, z_t=product.z_t,
                              antithetic=antithetic)


def intensity_violation_rate(ctx: SimulationContext, n: int, T: int, rng: RngSpec) -> float:
    """Fraction of simulated steps with a negative intensity increment."""
    batch = simulate_paths(ctx.model, "QP", n, T, rng)
    rates = []
    for spec in (ctx.intensity1, ctx.intensity2):
        if spec is None:
            continue
        inc = batch.x[:, 1:] @ spec.b + batch.y[:, 1:] @ spec.c
        rates.append(float((inc < 0).mean()))
    return max(rates)
