"""Contract payoffs and their values under the composed measure.

Each product description carries the model pieces it needs and exposes
``payoff()`` / ``context()`` so that :func:`qpval.montecarlo.estimate_product`
can value it by simulation as well.  Closed-form values come from the affine
recursions in :mod:`qpval.affine_engine`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import affine_engine as ae
from . import finite_space as fs
from .montecarlo import (
    ConstantPayoff,
    Payoff,
    QPEstimate,
    RngSpec,
    ScheduledPayoff,
    SimulationContext,
    SurrenderPayoff,
    SurvivalPayoff,
    VASurrenderPayoff,
    estimate_product,
)
from .stopping_times import Copula2


class EstimationError(ValueError):
    """Too few samples to estimate a risk margin."""


class DegeneracyError(ArithmeticError):
    """All posterior mixture weights vanished."""


def _state(spec, z_t):
    if z_t is not None:
        return np.asarray(z_t, dtype=float)
    if spec.z_t is not None:
        return np.asarray(spec.z_t, dtype=float)
    return spec.model.z0


# ---------------------------------------------------------------------------
# Survival claim and surrender option
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalClaimSpec:
    """``S_T`` paid if the insured survives past ``T`` (strict) or ``T - 1`` (lagged)."""

    model: ae.GaussianFactorModel
    stock: ae.StockSpec
    intensity: ae.IntensitySpec
    t: int
    T: int
    mode: str = "strict"
    z_t: np.ndarray | None = None

    kind = "survival"

    def payoff(self) -> Payoff:
        return SurvivalPayoff(self.T, self.mode)

    def context(self) -> SimulationContext:
        return SimulationContext(self.model, self.stock, self.intensity)


def price_survival(spec: SurvivalClaimSpec, z_t=None) -> float:
    return ae.price_survival_claim(spec.model, spec.stock, spec.intensity, spec.t, spec.T,
                                   _state(spec, z_t), spec.mode)


@dataclass(frozen=True)
class SurrenderOptionSpec:
    """Pays the stock value at the surrender time if it falls strictly between ``t`` and ``T``."""

    model: ae.GaussianFactorModel
    stock: ae.StockSpec
    intensity: ae.IntensitySpec
    t: int
    T: int
    z_t: np.ndarray | None = None

    kind = "surrender_option"

    def __post_init__(self):
        if not self.t < self.T:
            raise ValueError(f"need t < T, got t={self.t}, T={self.T}")

    def payoff(self) -> Payoff:
        return SurrenderPayoff(self.T)

    def context(self) -> SimulationContext:
        return SimulationContext(self.model, self.stock, self.intensity)


def surrender_terms(spec: SurrenderOptionSpec, z_t=None) -> list[tuple[int, float, float]]:
    """Per payment date ``i``: ``(i, lagged value, strict value)`` of ``S_i``."""
    z = _state(spec, z_t)
    out = []
    for i in range(spec.t + 1, spec.T):
        lagged = ae.price_survival_claim(spec.model, spec.stock, spec.intensity, spec.t, i, z, "lagged")
        strict = ae.price_survival_claim(spec.model, spec.stock, spec.intensity, spec.t, i, z, "strict")
        out.append((i, lagged, strict))
    return out


def price_surrender_option(spec: SurrenderOptionSpec, z_t=None) -> float:
    """Sum over ``i = t+1..T-1`` of lagged minus strict survival values of ``S_i``."""
    return math.fsum(lag - strict for _, lag, strict in surrender_terms(spec, z_t))


# ---------------------------------------------------------------------------
# Variable annuity surrender benefit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VASurrenderSpec:
    """Surrender benefit ``S_sigma`` paid if ``t < sigma < T`` and ``sigma <= tau``.

    ``int1`` drives the surrender time ``sigma``, ``int2`` the time of death ``tau``.
    """

    model: ae.GaussianFactorModel
    stock: ae.StockSpec
    int1: ae.IntensitySpec
    int2: ae.IntensitySpec
    t: int
    T: int
    copula: Copula2 = field(default_factory=Copula2)
    z_t: np.ndarray | None = None

    kind = "va_surrender"

    def __post_init__(self):
        if not self.t < self.T:
            raise ValueError(f"need t < T, got t={self.t}, T={self.T}")

    def payoff(self) -> Payoff:
        return VASurrenderPayoff(self.T)

    def context(self) -> SimulationContext:
        return SimulationContext(self.model, self.stock, self.int1, self.int2, self.copula)

    @property
    def affine(self) -> bool:
        return self.copula.kind == "independence"


def va_surrender_terms(spec: VASurrenderSpec, z_t=None) -> list[tuple[int, float, float]]:
    """Per date ``s``: values of ``S_s e^{-L1_{s-1} - L2_{s-1}}`` and ``S_s e^{-L1_s - L2_{s-1}}``."""
    z = _state(spec, z_t)
    out = []
    for s in range(spec.t + 1, spec.T):
        both = ae.price_joint_survival_stock(spec.model, spec.stock, spec.int1, spec.int2, spec.t, s, z)
        later = ae.price_two_time_block(spec.model, spec.stock, spec.int1, spec.int2,
                                        spec.t, s - 1, s, z, "unprimed")
        out.append((s, both, later))
    return out


def price_va_surrender(
    spec: VASurrenderSpec, z_t=None, n: int = 200_000, rng: RngSpec | None = None
) -> float:
    """Value given ``sigma > t`` and ``tau > t``.

    With the independence copula this is a sum of differences of affine
    two-time values; otherwise the payoff is simulated with ``n`` paths.
    """
    if spec.affine:
        return math.fsum(a - b for _, a, b in va_surrender_terms(spec, z_t))
    est = estimate_product(_with_state(spec, z_t), None, n, rng or RngSpec())
    return est.mean


def _with_state(spec, z_t):
    if z_t is None:
        return spec
    from dataclasses import replace

    return replace(spec, z_t=np.asarray(z_t, dtype=float))


# ---------------------------------------------------------------------------
# Scheduled premiums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PaymentSchedule:
    """Premiums ``amounts[k]`` due at ``dates[k]``; ``A(u) = sum of amounts due by u``."""

    dates: tuple
    amounts: tuple

    def __post_init__(self):
        if len(self.dates) != len(self.amounts):
            raise ValueError("dates and amounts must have the same length")
        if any(a < 0 for a in self.amounts):
            raise ValueError("premium amounts must be non-negative")
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "amounts", tuple(self.amounts))

    def A(self, u) -> float:
        return sum((a for d, a in zip(self.dates, self.amounts) if d <= u), 0)

    def total(self):
        return self.A(math.inf)


@dataclass(frozen=True)
class ModifiedBenefits:
    """Benefit plus the premiums that would have been due after termination."""

    schedule: PaymentSchedule
    T: int

    def evaluate(self, benefit, tau):
        """``benefit + A(T) - A(min(tau, T))``."""
        return benefit + self.schedule.A(self.T) - self.schedule.A(min(tau, self.T))

    def add_on(self, tau):
        return self.schedule.A(self.T) - self.schedule.A(min(tau, self.T))


@dataclass(frozen=True)
class ScheduledContract:
    """A benefit financed by scheduled premiums that stop at the termination time.

    ``benefit`` is ``"survival"`` (stock paid on survival past ``T``) or
    ``"none"``.  Termination is driven by ``intensity``.
    """

    model: ae.GaussianFactorModel
    stock: ae.StockSpec
    intensity: ae.IntensitySpec
    schedule: PaymentSchedule
    t: int
    T: int
    benefit: str = "survival"
    z_t: np.ndarray | None = None

    kind = "scheduled"

    def __post_init__(self):
        if self.benefit not in ("survival", "none"):
            raise ValueError(f"unknown benefit {self.benefit!r}")
        if any(not self.t <= d <= self.T for d in self.schedule.dates):
            raise ValueError("payment dates must lie in [t, T]")

    def payoff(self) -> Payoff:
        base = SurvivalPayoff(self.T, "strict") if self.benefit == "survival" else ConstantPayoff(self.T, 0.0)
        return ScheduledPayoff(self.T, self.schedule.dates,
                               tuple(float(a) for a in self.schedule.amounts), base)

    def context(self) -> SimulationContext:
        return SimulationContext(self.model, self.stock, self.intensity)


def scheduled_to_single(contract) -> tuple:
    """Single premium ``A(T)`` and the modified benefit descriptor.

    Accepts a :class:`ScheduledContract` or anything with ``schedule`` and ``T``.
    """
    return contract.schedule.A(contract.T), ModifiedBenefits(contract.schedule, contract.T)


def price_scheduled(contract: ScheduledContract, z_t=None) -> float:
    """Value of the modified benefits ``X + A(T) - A(tau ^ T)`` given no termination by ``t``."""
    z = _state(contract, z_t)
    m = contract.model
    benefit = 0.0
    if contract.benefit == "survival":
        benefit = ae.price_survival_claim(m, contract.stock, contract.intensity, contract.t, contract.T, z)
    unit = ae.StockSpec(0.0, np.zeros(m.d2))
    expected_paid = 0.0
    for date, amount in zip(contract.schedule.dates, contract.schedule.amounts):
        # paid iff termination is not before the due date
        if date - 1 <= contract.t:
            alive = 1.0
        else:
            alive = ae.price_survival_claim(m, unit, contract.intensity, contract.t, date - 1, z)
        expected_paid += float(amount) * alive
    return benefit + float(contract.schedule.total()) - expected_paid


# ---------------------------------------------------------------------------
# Longevity mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LongevityMixture:
    """Candidate hazard curves ``curves[i][t]`` with prior weights."""

    curves: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        curves = np.atleast_2d(np.asarray(self.curves, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if curves.shape[0] != weights.size:
            raise ValueError("one weight per curve required")
        if np.any(curves < 0):
            raise ValueError("hazards must be non-negative")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "weights", weights)

    def death_probs(self, t: int) -> np.ndarray:
        return -np.expm1(-self.curves[:, t])


@dataclass(frozen=True)
class MixtureUpdate:
    weights: np.ndarray  # (periods + 1, n_curves)
    intensity: np.ndarray  # mixture hazard sum_i p_t^i theta^i(t)


def mixture_update(mix: LongevityMixture, observations: Sequence[tuple[int, int]]) -> MixtureUpdate:
    """Bayes-update the curve weights with per-period ``(alive, deaths)`` counts.

    Binomial likelihood with death probability ``1 - exp(-hazard)``.
    """
    logw = np.log(mix.weights)
    path = [mix.weights.copy()]
    for t, (alive, deaths) in enumerate(observations):
        if not 0 <= deaths <= alive:
            raise ValueError(f"period {t}: need 0 <= deaths <= alive, got {deaths}, {alive}")
        q = mix.death_probs(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = np.where(deaths > 0, deaths * np.log(q), 0.0) + np.where(
                alive - deaths > 0, (alive - deaths) * np.log1p(-q), 0.0
            )
        logw = logw + ll
        finite = np.isfinite(logw)
        if not finite.any():
            raise DegeneracyError(f"all mixture weights vanished after period {t}")
        top = logw[finite].max()
        w = np.where(finite, np.exp(logw - top), 0.0)
        w /= w.sum()
        logw = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), -np.inf)
        path.append(w)
    weights = np.array(path)
    horizon = min(weights.shape[0], mix.curves.shape[1])
    intensity = np.einsum("ti,it->t", weights[:horizon], mix.curves[:, :horizon])
    return MixtureUpdate(weights, intensity)


# ---------------------------------------------------------------------------
# Risk margin
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpectedShortfall:
    """Mean of the worst ``1 - alpha`` fraction of losses."""

    alpha: float = 0.99

    def __call__(self, losses: np.ndarray) -> float:
        x = np.sort(np.asarray(losses, dtype=float))
        k = max(1, int(math.ceil((1.0 - self.alpha) * x.size)))
        return float(x[-k:].mean())


@dataclass(frozen=True)
class StandardDeviationPrinciple:
    """``k`` times the sample standard deviation."""

    k: float = 1.0

    def __call__(self, losses: np.ndarray) -> float:
        x = np.asarray(losses, dtype=float)
        return float(self.k * x.std(ddof=1)) if x.size > 1 else 0.0


def risk_measure(spec: dict) -> Callable:
    kind = spec.get("kind", "expected_shortfall")
    if kind == "expected_shortfall":
        return ExpectedShortfall(float(spec.get("alpha", 0.99)))
    if kind == "standard_deviation":
        return StandardDeviationPrinciple(float(spec.get("k", 1.0)))
    raise ValueError(f"unknown risk measure {kind!r}")


@dataclass(frozen=True)
class RiskMarginDecomposition:
    base: float
    y1: np.ndarray  # conditional-mean gap per scenario
    y1_hedged: np.ndarray
    y2: np.ndarray  # pooling residual per scenario
    margin_joint: float  # rho(hedged Y1 + Y2)
    margin_y1: float
    margin_y2: float

    @property
    def margin_split(self) -> float:
        """The alternative ``rho(Y1) + rho(Y2)``."""
        return self.margin_y1 + self.margin_y2


def risk_margin_decompose(
    conditional_means,
    claims,
    rho: Callable,
    hedge_pnl=None,
    mass: float = 1.0,
    min_samples: int = 20,
) -> RiskMarginDecomposition:
    """Split a pooled commitment into base value, market gap and pooling residual.

    Parameters
    ----------
    conditional_means : array, shape (K,)
        Per scenario, the claim's conditional mean given all information up to
        maturity, with scenarios drawn from the composed measure.
    claims : array, shape (K, n)
        Per scenario, ``n`` conditionally i.i.d. claim draws (one per policy).
    rho : callable
        Risk measure acting on a loss sample.
    hedge_pnl : array, shape (K,), optional
        Gains of a financial hedge, added to the market gap.
    mass : float
        Total allocation weight; policies get ``mass / n`` each.
    """
    m = np.asarray(conditional_means, dtype=float).reshape(-1)
    X = np.asarray(claims, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != m.size:
        raise ValueError("claims and conditional means must cover the same scenarios")
    if m.size < min_samples:
        raise EstimationError(f"need at least {min_samples} scenarios, got {m.size}")
    base = float(m.mean())
    y1 = mass * (m - base)
    y1h = y1 if hedge_pnl is None else y1 + np.asarray(hedge_pnl, dtype=float).reshape(-1)
    y2 = mass * X.mean(axis=1) - mass * m
    return RiskMarginDecomposition(
        base=mass * base,
        y1=y1,
        y1_hedged=y1h,
        y2=y2,
        margin_joint=rho(y1h + y2),
        margin_y1=rho(y1h),
        margin_y2=rho(y2),
    )


# ---------------------------------------------------------------------------
# Market consistency on finite spaces
# ---------------------------------------------------------------------------


def qp_price(X: fs.FiniteRV, Q: fs.FiniteMeasure, P: fs.FiniteMeasure,
             filtration: fs.FiniteFiltration, t: int) -> fs.FiniteRV:
    """``E_Q[E_P[X | F_T] | F_t]`` on a finite filtered space."""
    return fs.qp_value(X, Q, P, filtration[filtration.horizon], filtration[t])


def market_consistency_gap(H: fs.FiniteRV, H_extra: fs.FiniteRV, Q, P, filtration, t: int) -> fs.FiniteRV:
    """``value(H + H') - E_Q[H | F_t] - value(H')`` for ``F_T``-measurable ``H``."""
    if not filtration[filtration.horizon].is_measurable(H):
        raise fs.MeasurabilityError("financial component must be F_T-measurable")
    total = qp_price(H + H_extra, Q, P, filtration, t)
    fin = fs.conditional_expectation(H, filtration[t], Q)
    return total - fin - qp_price(H_extra, Q, P, filtration, t)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductValuation:
    product: str
    t: int
    value: float
    stderr: float | None
    method: str
    n: int | None = None
    seed: int | None = None


def value_product(spec, method: str = "affine", n: int = 200_000, rng: RngSpec | None = None) -> ProductValuation:
    """Value a product description by closed form (``"affine"``) or simulation (``"mc"``)."""
    if method == "mc" or (method == "affine" and isinstance(spec, VASurrenderSpec) and not spec.affine):
        rng = rng or RngSpec()
        est: QPEstimate = estimate_product(spec, None, n, rng)
        return ProductValuation(spec.kind, spec.t, est.mean, est.stderr, "mc", est.n, rng.seed)
    if method != "affine":
        raise ValueError(f"unknown method {method!r}")
    pricer = {
        SurvivalClaimSpec: price_survival,
        SurrenderOptionSpec: price_surrender_option,
        VASurrenderSpec: price_va_surrender,
        ScheduledContract: price_scheduled,
    }[type(spec)]
    return ProductValuation(spec.kind, spec.t, pricer(spec), None, "affine")
